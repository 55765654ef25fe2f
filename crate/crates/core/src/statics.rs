//! Quasi-static inverse dynamics.
//!
//! Weights, the patient wrench, actuator forces and actuator friction are
//! mapped to the fifteen dependent coordinates by virtual power. The
//! constraint reactions are eliminated with the velocity distribution matrix
//! `R*`, leaving a 4 x 4 system for the actuator forces; the Lagrange
//! multipliers are recovered afterwards from the secondary rows.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3, Vector4};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kinematics::{
    constraint_jacobian, forward_jacobian, full_coordinates, r_star_from_blocks,
    secondary_determinant, sign_changes, split_jacobian, SINGULAR_RATIO,
};
use crate::model::{
    rotation_matrix, rotation_partials, ExternalWrench, FullCoordinates, PhysicalParams,
    PlatformGeometry, DOF, LIMBS, MIN_LIMB_LENGTH, NQ, NS,
};
use crate::trajectory::ViaPoint;

pub type PointJacobian = SMatrix<f64, 3, NQ>;
pub type GeneralizedVector = SVector<f64, NQ>;
pub type ActuationMatrix = SMatrix<f64, NQ, DOF>;

/// Position Jacobians `d r_G / d q` of every body point that carries a load.
#[derive(Debug, Clone)]
pub struct ComJacobians {
    pub cylinder: [PointJacobian; LIMBS],
    pub rod: [PointJacobian; LIMBS],
    pub platform: PointJacobian,
    pub force_point: PointJacobian,
    /// Platform angular velocity `omega = J_omega * qdot`.
    pub angular: PointJacobian,
}

#[derive(Debug, Clone)]
pub struct GeneralizedForces {
    pub q_grav: GeneralizedVector,
    pub q_ext: GeneralizedVector,
    pub q_fric: GeneralizedVector,
    pub q_act_matrix: ActuationMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticsSolution {
    /// Actuator forces, positive when pushing the limb longer (N).
    pub forces: Vector4<f64>,
    pub lagrange_multipliers: SVector<f64, NS>,
    /// Infinity norm of the projected four-dimensional equation.
    pub residual: f64,
    /// Infinity norm of the full fifteen-dimensional equation.
    pub full_residual: f64,
    /// Actuator power `F_i * qdot_i3` (W).
    pub power: Vector4<f64>,
}

/// Unit direction of limb `i` as a function of its joint angles, and the
/// partial derivatives w.r.t. those angles.
fn limb_direction(q: &FullCoordinates, limb: usize) -> (Vector3<f64>, [Vector3<f64>; 2]) {
    let k = FullCoordinates::angle_index(limb);
    if limb < 3 {
        let (sa, ca) = q.0[k].sin_cos();
        let (sb, cb) = q.0[k + 1].sin_cos();
        (
            Vector3::new(ca * sb, -cb, sa * sb),
            [
                Vector3::new(-sa * sb, 0.0, ca * sb),
                Vector3::new(ca * cb, sb, sa * cb),
            ],
        )
    } else {
        let (s, c) = q.0[k].sin_cos();
        (
            Vector3::new(-s, 0.0, c),
            [Vector3::new(-c, 0.0, -s), Vector3::zeros()],
        )
    }
}

fn angle_columns(limb: usize) -> &'static [usize] {
    const COLS: [[usize; 2]; 3] = [[0, 1], [2, 3], [4, 5]];
    if limb < 3 {
        &COLS[limb]
    } else {
        &[6]
    }
}

fn platform_point_jacobian(q: &FullCoordinates, local: &Vector3<f64>) -> PointJacobian {
    let (rot_t, rot_p) = rotation_partials(&q.pose());
    let mut j = PointJacobian::zeros();
    j[(0, FullCoordinates::XM)] = 1.0;
    j[(2, FullCoordinates::ZM)] = 1.0;
    j.set_column(FullCoordinates::THETA, &(rot_t * local));
    j.set_column(FullCoordinates::PSI, &(rot_p * local));
    j
}

pub fn com_velocity_jacobians(phys: &PhysicalParams, q: &FullCoordinates) -> Result<ComJacobians> {
    let mut cylinder = [PointJacobian::zeros(); LIMBS];
    let mut rod = [PointJacobian::zeros(); LIMBS];
    for i in 0..LIMBS {
        let length = q.0[FullCoordinates::length_index(i)];
        if !(length > MIN_LIMB_LENGTH) {
            return Err(Error::DegenerateLimb {
                limb: i + 1,
                length,
            });
        }
        let (dir, partials) = limb_direction(q, i);
        for (col, d) in angle_columns(i).iter().zip(partials) {
            cylinder[i].set_column(*col, &(d * phys.com_cyl[i]));
            rod[i].set_column(*col, &(d * (length - phys.com_rod[i])));
        }
        rod[i].set_column(FullCoordinates::length_index(i), &dir);
    }

    let st_ct = q.0[FullCoordinates::THETA].sin_cos();
    let mut angular = PointJacobian::zeros();
    angular[(1, FullCoordinates::THETA)] = 1.0;
    angular.set_column(FullCoordinates::PSI, &Vector3::new(st_ct.0, 0.0, st_ct.1));

    Ok(ComJacobians {
        cylinder,
        rod,
        platform: platform_point_jacobian(q, &phys.platform_com()),
        force_point: platform_point_jacobian(q, &phys.force_point()),
        angular,
    })
}

pub fn q_grav(phys: &PhysicalParams, jac: &ComJacobians) -> GeneralizedVector {
    let weight = |m: f64| Vector3::new(0.0, 0.0, -m * phys.g);
    let mut out = jac.platform.transpose() * weight(phys.mass_platform);
    for i in 0..LIMBS {
        out += jac.cylinder[i].transpose() * weight(phys.mass_cyl[i]);
        out += jac.rod[i].transpose() * weight(phys.mass_rod[i]);
    }
    out
}

/// Generalized forces of the patient wrench. Force and torque are given in
/// the mobile frame and rotated into the fixed frame first.
pub fn q_ext(
    q: &FullCoordinates,
    jac: &ComJacobians,
    wrench: &ExternalWrench,
) -> GeneralizedVector {
    let rot: Matrix3<f64> = rotation_matrix(&q.pose());
    let force = rot * Vector3::from(wrench.force);
    let torque = rot * Vector3::from(wrench.torque);
    jac.force_point.transpose() * force + jac.angular.transpose() * torque
}

/// Coulomb plus viscous actuator friction; `sign(0) = 0`.
pub fn q_fric(phys: &PhysicalParams, q_dot_active: &Vector4<f64>) -> GeneralizedVector {
    let mut out = GeneralizedVector::zeros();
    for i in 0..LIMBS {
        let v = q_dot_active[i];
        let sign = if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        };
        out[FullCoordinates::length_index(i)] = -sign * (phys.mu_c[i] + phys.mu_v[i] * v.abs());
    }
    out
}

/// Actuator forces act directly on their own extension coordinates.
pub fn q_act_matrix() -> ActuationMatrix {
    let mut a = ActuationMatrix::zeros();
    for i in 0..LIMBS {
        a[(FullCoordinates::length_index(i), i)] = 1.0;
    }
    a
}

/// Actuator forces projected along the limb through the rod CoM Jacobian.
/// Equal to [`q_act_matrix`] for rigid prismatic pairs; kept as a check.
pub fn q_act_matrix_projected(q: &FullCoordinates, jac: &ComJacobians) -> ActuationMatrix {
    let mut a = ActuationMatrix::zeros();
    for i in 0..LIMBS {
        let (dir, _) = limb_direction(q, i);
        a.set_column(i, &(jac.rod[i].transpose() * dir));
    }
    a
}

pub fn generalized_forces(
    phys: &PhysicalParams,
    q: &FullCoordinates,
    q_dot_active: &Vector4<f64>,
    wrench: &ExternalWrench,
) -> Result<GeneralizedForces> {
    let jac = com_velocity_jacobians(phys, q)?;
    Ok(GeneralizedForces {
        q_grav: q_grav(phys, &jac),
        q_ext: q_ext(q, &jac, wrench),
        q_fric: q_fric(phys, q_dot_active),
        q_act_matrix: q_act_matrix(),
    })
}

/// Actuator forces holding configuration `q` in quasi-static equilibrium.
pub fn inverse_statics(
    geom: &PlatformGeometry,
    phys: &PhysicalParams,
    q: &FullCoordinates,
    q_dot_active: &Vector4<f64>,
    wrench: &ExternalWrench,
) -> Result<StaticsSolution> {
    let phi_q = constraint_jacobian(geom, q);
    let (phi_q_s, phi_q_i) = split_jacobian(&phi_q);
    let r_star = r_star_from_blocks(&phi_q_s, &phi_q_i)?;
    let gf = generalized_forces(phys, q, q_dot_active, wrench)?;
    let applied = gf.q_grav + gf.q_ext + gf.q_fric;

    let lhs = r_star.transpose() * gf.q_act_matrix;
    let rhs = -(r_star.transpose() * applied);
    let forces = lhs
        .lu()
        .solve(&rhs)
        .ok_or(Error::NearSingular { ratio: 0.0 })?;

    let total = applied + gf.q_act_matrix * forces;
    let residual = (r_star.transpose() * total).amax();
    let secondary = total.fixed_rows::<NS>(0).into_owned();
    let lagrange_multipliers = phi_q_s
        .transpose()
        .lu()
        .solve(&(-secondary))
        .ok_or(Error::NearSingular { ratio: 0.0 })?;
    let full_residual = (total + phi_q.transpose() * lagrange_multipliers).amax();
    let power = forces.component_mul(q_dot_active);

    Ok(StaticsSolution {
        forces,
        lagrange_multipliers,
        residual,
        full_residual,
        power,
    })
}

/// Statics at one via point of a path.
#[derive(Debug, Clone)]
pub struct PathStatics {
    pub t: f64,
    pub det_phi_x: f64,
    /// `|det(Phi_q^s)|` relative to its maximum along the path.
    pub det_ratio: f64,
    pub solution: Result<StaticsSolution>,
    /// Near-singular, unsolvable, or adjacent to a sign change of `det(Phi_x)`.
    pub flagged: bool,
}

/// Statics at every via point. Failures are reported per point.
pub fn forces_along_path(
    geom: &PlatformGeometry,
    phys: &PhysicalParams,
    points: &[ViaPoint],
) -> Vec<PathStatics> {
    struct Raw {
        det_x: f64,
        det_s: f64,
        solution: Result<StaticsSolution>,
    }

    let raw: Vec<Raw> = points
        .par_iter()
        .enumerate()
        .map(|(k, vp)| {
            let evaluated = (|| {
                let q = full_coordinates(geom, &vp.pose)?;
                let (phi_x, det_x) = forward_jacobian(geom, &vp.pose)?;
                let (phi_q_s, _) = split_jacobian(&constraint_jacobian(geom, &q));
                let (det_s, _) = secondary_determinant(&phi_q_s);
                let q_dot = phi_x * vp.rates;
                Ok((
                    det_x,
                    det_s,
                    inverse_statics(geom, phys, &q, &q_dot, &vp.wrench),
                ))
            })();
            match evaluated {
                Ok((det_x, det_s, solution)) => Raw {
                    det_x,
                    det_s,
                    solution,
                },
                Err(e) => Raw {
                    det_x: f64::NAN,
                    det_s: 0.0,
                    solution: Err(match e {
                        Error::UnreachablePose { .. } => Error::UnreachablePose { index: Some(k) },
                        other => other,
                    }),
                },
            }
        })
        .collect();

    let max_det = raw.iter().map(|r| r.det_s.abs()).fold(0.0, f64::max);
    let dets: Vec<f64> = raw.iter().map(|r| r.det_x).collect();
    let mut near_crossing = vec![false; raw.len()];
    for k in sign_changes(&dets) {
        near_crossing[k] = true;
        near_crossing[k + 1] = true;
    }

    raw.into_iter()
        .zip(points)
        .zip(near_crossing)
        .map(|((r, vp), crossing)| {
            let det_ratio = if max_det > 0.0 {
                r.det_s.abs() / max_det
            } else {
                0.0
            };
            let solution = match r.solution {
                Ok(_) if det_ratio < SINGULAR_RATIO => {
                    Err(Error::NearSingular { ratio: det_ratio })
                }
                other => other,
            };
            let flagged = crossing || solution.is_err();
            PathStatics {
                t: vp.t,
                det_phi_x: r.det_x,
                det_ratio,
                solution,
                flagged,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PlatformPose;
    use approx::assert_relative_eq;

    fn state() -> (PlatformGeometry, FullCoordinates) {
        let g = PlatformGeometry::initial();
        let q = full_coordinates(&g, &PlatformPose::new(0.04, 0.6, 0.15, -0.2)).unwrap();
        (g, q)
    }

    #[test]
    fn friction_values() {
        let phys = PhysicalParams::default();
        assert_eq!(q_fric(&phys, &Vector4::zeros()), GeneralizedVector::zeros());
        let f = q_fric(&phys, &Vector4::new(0.1, 0.0, 0.0, 0.0));
        assert_relative_eq!(f[11], -50.0, epsilon = 1e-12);
        let v = Vector4::new(0.03, -0.2, 0.07, -0.01);
        assert_eq!(q_fric(&phys, &-v), -q_fric(&phys, &v));
    }

    #[test]
    fn massless_gravity_vanishes() {
        let (_, q) = state();
        let phys = PhysicalParams::massless();
        let jac = com_velocity_jacobians(&phys, &q).unwrap();
        assert_eq!(q_grav(&phys, &jac), GeneralizedVector::zeros());
    }

    #[test]
    fn gravity_is_linear_in_g() {
        let (_, q) = state();
        let phys = PhysicalParams::default();
        let jac = com_velocity_jacobians(&phys, &q).unwrap();
        let doubled = PhysicalParams {
            g: 2.0 * phys.g,
            ..phys.clone()
        };
        assert_relative_eq!(
            q_grav(&doubled, &jac),
            q_grav(&phys, &jac) * 2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn jacobian_structure() {
        let (_, q) = state();
        let jac = com_velocity_jacobians(&PhysicalParams::default(), &q).unwrap();
        assert_eq!(
            jac.platform.column(FullCoordinates::XM).into_owned(),
            Vector3::x()
        );
        assert_eq!(jac.cylinder[0].column(11).into_owned(), Vector3::zeros());
    }

    #[test]
    fn external_force_at_origin_without_rotation() {
        let g = PlatformGeometry::initial();
        let q = full_coordinates(&g, &PlatformPose::new(0.0, 0.55, 0.0, 0.0)).unwrap();
        let jac = com_velocity_jacobians(&PhysicalParams::default(), &q).unwrap();
        let qe = q_ext(&q, &jac, &ExternalWrench::force([45.0, 3.0, -45.0]));
        assert_eq!(qe[FullCoordinates::XM], 45.0);
        assert_eq!(qe[FullCoordinates::ZM], -45.0);
        assert_eq!(
            q_ext(&q, &jac, &ExternalWrench::zero()),
            GeneralizedVector::zeros()
        );
    }

    #[test]
    fn projected_actuation_matches_slot_form() {
        let (_, q) = state();
        let jac = com_velocity_jacobians(&PhysicalParams::default(), &q).unwrap();
        assert_relative_eq!(
            q_act_matrix_projected(&q, &jac),
            q_act_matrix(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn unloaded_statics_is_zero() {
        let (g, q) = state();
        let s = inverse_statics(
            &g,
            &PhysicalParams::massless(),
            &q,
            &Vector4::zeros(),
            &ExternalWrench::zero(),
        )
        .unwrap();
        assert_eq!(s.forces, Vector4::zeros());
    }

    #[test]
    fn loaded_statics_residuals() {
        let (g, q) = state();
        let s = inverse_statics(
            &g,
            &PhysicalParams::default(),
            &q,
            &Vector4::new(0.01, -0.02, 0.0, 0.015),
            &ExternalWrench {
                force: [45.0, 0.0, -45.0],
                torque: [1.0, -2.0, 0.5],
            },
        )
        .unwrap();
        assert!(s.residual < 1e-9, "{}", s.residual);
        assert!(s.full_residual < 1e-8, "{}", s.full_residual);
    }
}
