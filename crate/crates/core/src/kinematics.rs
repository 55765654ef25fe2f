//! Closed-form inverse kinematics, the eleven loop-closure equations, their
//! Jacobians, Newton–Raphson forward kinematics and singularity measures.

use nalgebra::{Matrix4, SMatrix, SVector, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::model::{
    anchor_points, rotation_matrix, rotation_partials, FullCoordinates, PlatformGeometry,
    PlatformPose, DOF, LIMBS, MIN_LIMB_LENGTH, NQ, NS,
};

pub type ConstraintJacobian = SMatrix<f64, NS, NQ>;
pub type SecondaryBlock = SMatrix<f64, NS, NS>;
pub type IndependentBlock = SMatrix<f64, NS, DOF>;
pub type VelocityDistribution = SMatrix<f64, NQ, DOF>;

/// `|det|` of the secondary block relative to the product of its column
/// norms below which a single configuration counts as singular.
pub const SINGULAR_RATIO: f64 = 1e-9;

/// Everything the statics and optimizer need at one configuration.
#[derive(Debug, Clone)]
pub struct JacobianBundle {
    pub phi: SVector<f64, NS>,
    pub phi_q: ConstraintJacobian,
    pub phi_q_s: SecondaryBlock,
    pub phi_q_i: IndependentBlock,
    pub r_star: VelocityDistribution,
    pub phi_x: Matrix4<f64>,
    pub det_phi_x: f64,
}

/// Active limb lengths `(q13, q23, q33, q42)` from the closed-form expressions.
pub fn inverse_kinematics_active(
    geom: &PlatformGeometry,
    pose: &PlatformPose,
) -> Result<Vector4<f64>> {
    let PlatformGeometry { r, rm, ds, .. } = *geom;
    let PlatformPose { xm, zm, theta, psi } = *pose;
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    let (sfd, cfd) = geom.beta_fd.sin_cos();
    let (sfi, cfi) = geom.beta_fi.sin_cos();
    let (smd, cmd) = geom.beta_md.sin_cos();
    let (smi, cmi) = geom.beta_mi.sin_cos();
    let common = r * r + rm * rm + xm * xm + zm * zm;

    let q13 = r * r
        + (2.0 * xm - 2.0 * ct * cp * rm) * r
        + rm * rm
        + (2.0 * zm * cp * st - 2.0 * ct * cp * xm) * rm
        + xm * xm
        + zm * zm;
    let q23 = common
        + 2.0
            * rm
            * (r * (cfd * ct * smd * sp - cfd * cmd * cp * ct - cmd * sfd * sp - cp * sfd * smd)
                + ct * cp * cmd * xm
                - cmd * cp * st * zm
                - ct * smd * sp * xm
                + st * sp * smd * zm)
        - 2.0 * r * xm * cfd;
    let q33 = common
        + 2.0
            * rm
            * (r * (-cfi * ct * smi * sp - cfi * cmi * cp * ct + cmi * sfi * sp - cp * sfi * smi)
                + ct * cp * cmi * xm
                - cmi * cp * st * zm
                + ct * smi * sp * xm
                - st * sp * smi * zm)
        - 2.0 * r * xm * cfi;
    let q42 = ds * ds - 2.0 * ds * xm + xm * xm + zm * zm;

    let radicands = Vector4::new(q13, q23, q33, q42);
    if radicands.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::UnreachablePose { index: None });
    }
    let lengths = radicands.map(f64::sqrt);
    // A collapsed limb cannot be assembled either.
    if lengths.iter().any(|l| !(*l > MIN_LIMB_LENGTH)) {
        return Err(Error::UnreachablePose { index: None });
    }
    Ok(lengths)
}

fn check_lengths(lengths: &Vector4<f64>) -> Result<()> {
    for (i, l) in lengths.iter().enumerate() {
        if !(*l > MIN_LIMB_LENGTH) {
            return Err(Error::DegenerateLimb {
                limb: i + 1,
                length: *l,
            });
        }
    }
    Ok(())
}

/// Joint angles `(q11, q12, q21, q22, q31, q32, q41)` of the assembled
/// configuration. Lateral limbs take `q_i2` in `[0, pi]`.
pub fn solve_secondary_angles(geom: &PlatformGeometry, pose: &PlatformPose) -> Result<[f64; 7]> {
    let anchors = anchor_points(geom, pose);
    let mut angles = [0.0; 7];
    for i in 0..3 {
        let v = anchors.limb_vector(i);
        let length = v.norm();
        if !(length > MIN_LIMB_LENGTH) {
            return Err(Error::DegenerateLimb {
                limb: i + 1,
                length,
            });
        }
        let u = v / length;
        // direction = (c1 s2, -c2, s1 s2)
        angles[2 * i + 1] = (-u.y).clamp(-1.0, 1.0).acos();
        angles[2 * i] = u.z.atan2(u.x);
    }
    let v = anchors.limb_vector(3);
    let length = v.norm();
    if !(length > MIN_LIMB_LENGTH) {
        return Err(Error::DegenerateLimb { limb: 4, length });
    }
    // direction = (-s41, 0, c41)
    angles[6] = (-v.x).atan2(v.z);
    Ok(angles)
}

/// Consistent dependent coordinates for a pose.
pub fn full_coordinates(geom: &PlatformGeometry, pose: &PlatformPose) -> Result<FullCoordinates> {
    let lengths = inverse_kinematics_active(geom, pose)?;
    check_lengths(&lengths)?;
    let angles = solve_secondary_angles(geom, pose)?;
    Ok(FullCoordinates::assemble(&angles, pose, &lengths))
}

/// The eleven loop-closure residuals.
///
/// The sixth equation carries `+ S_theta C_psi C_MD Rm`; that sign is the one
/// consistent with the closed-form `q23` and with a rigid platform.
pub fn constraint_vector(geom: &PlatformGeometry, q: &FullCoordinates) -> SVector<f64, NS> {
    let q = &q.0;
    let (r, rm, ds) = (geom.r, geom.rm, geom.ds);
    let (xm, zm) = (q[7], q[8]);
    let (st, ct) = q[9].sin_cos();
    let (sp, cp) = q[10].sin_cos();
    let (sfd, cfd) = geom.beta_fd.sin_cos();
    let (sfi, cfi) = geom.beta_fi.sin_cos();
    let (smd, cmd) = geom.beta_md.sin_cos();
    let (smi, cmi) = geom.beta_mi.sin_cos();
    let (s11, c11) = q[0].sin_cos();
    let (s12, c12) = q[1].sin_cos();
    let (s21, c21) = q[2].sin_cos();
    let (s22, c22) = q[3].sin_cos();
    let (s31, c31) = q[4].sin_cos();
    let (s32, c32) = q[5].sin_cos();
    let (s41, c41) = q[6].sin_cos();
    let (q13, q23, q33, q42) = (q[11], q[12], q[13], q[14]);

    SVector::<f64, NS>::from_column_slice(&[
        c11 * s12 * q13 - r - xm + ct * cp * rm,
        -c12 * q13 + sp * rm,
        s11 * s12 * q13 - zm - st * cp * rm,
        c21 * s22 * q23 + r * cfd - xm - ct * cp * cmd * rm + ct * sp * smd * rm,
        -c22 * q23 + r * sfd - sp * cmd * rm - cp * smd * rm,
        s21 * s22 * q23 - zm + st * cp * cmd * rm - st * sp * smd * rm,
        c31 * s32 * q33 + r * cfi - xm - ct * cp * cmi * rm - ct * sp * smi * rm,
        -c32 * q33 - r * sfi - sp * cmi * rm + cp * smi * rm,
        s31 * s32 * q33 - zm + st * cp * cmi * rm + st * sp * smi * rm,
        -s41 * q42 + ds - xm,
        c41 * q42 - zm,
    ])
}

/// Analytic `dPhi/dq` (11 x 15).
pub fn constraint_jacobian(geom: &PlatformGeometry, q: &FullCoordinates) -> ConstraintJacobian {
    let pose = q.pose();
    let (rot_t, rot_p) = rotation_partials(&pose);
    let local = geom.platform_anchors_local();
    let mut jac = ConstraintJacobian::zeros();

    for i in 0..3 {
        let row = 3 * i;
        let (a, b) = (q.0[2 * i], q.0[2 * i + 1]);
        let length = q.0[FullCoordinates::length_index(i)];
        let (sa, ca) = a.sin_cos();
        let (sb, cb) = b.sin_cos();
        let d_a = Vector3::new(-sa * sb, 0.0, ca * sb) * length;
        let d_b = Vector3::new(ca * cb, sb, sa * cb) * length;
        let dir = Vector3::new(ca * sb, -cb, sa * sb);
        let d_theta = -(rot_t * local[i]);
        let d_psi = -(rot_p * local[i]);
        jac.fixed_view_mut::<3, 1>(row, 2 * i).copy_from(&d_a);
        jac.fixed_view_mut::<3, 1>(row, 2 * i + 1).copy_from(&d_b);
        jac[(row, FullCoordinates::XM)] = -1.0;
        jac[(row + 2, FullCoordinates::ZM)] = -1.0;
        jac.fixed_view_mut::<3, 1>(row, FullCoordinates::THETA)
            .copy_from(&d_theta);
        jac.fixed_view_mut::<3, 1>(row, FullCoordinates::PSI)
            .copy_from(&d_psi);
        jac.fixed_view_mut::<3, 1>(row, FullCoordinates::length_index(i))
            .copy_from(&dir);
    }

    let (s41, c41) = q.0[6].sin_cos();
    let q42 = q.0[14];
    jac[(9, 6)] = -c41 * q42;
    jac[(10, 6)] = -s41 * q42;
    jac[(9, FullCoordinates::XM)] = -1.0;
    jac[(10, FullCoordinates::ZM)] = -1.0;
    jac[(9, 14)] = -s41;
    jac[(10, 14)] = c41;
    jac
}

pub fn split_jacobian(jac: &ConstraintJacobian) -> (SecondaryBlock, IndependentBlock) {
    (
        jac.fixed_columns::<NS>(0).into_owned(),
        jac.fixed_columns::<DOF>(NS).into_owned(),
    )
}

/// `d(q13, q23, q33, q42) / d(xm, zm, theta, psi)` and its determinant.
pub fn forward_jacobian(
    geom: &PlatformGeometry,
    pose: &PlatformPose,
) -> Result<(Matrix4<f64>, f64)> {
    if !pose.is_finite() {
        return Err(Error::UnreachablePose { index: None });
    }
    let anchors = anchor_points(geom, pose);
    let (rot_t, rot_p) = rotation_partials(pose);
    let local = geom.platform_anchors_local();
    let mut phi_x = Matrix4::zeros();
    for i in 0..LIMBS {
        let v = anchors.limb_vector(i);
        let length = v.norm();
        if !(length > MIN_LIMB_LENGTH) {
            return Err(Error::UnreachablePose { index: None });
        }
        let u = v / length;
        phi_x[(i, 0)] = u.x;
        phi_x[(i, 1)] = u.z;
        phi_x[(i, 2)] = u.dot(&(rot_t * local[i]));
        phi_x[(i, 3)] = u.dot(&(rot_p * local[i]));
    }
    let det = phi_x.determinant();
    Ok((phi_x, det))
}

/// Determinant of the secondary block and its ratio to the Hadamard bound.
pub fn secondary_determinant(phi_q_s: &SecondaryBlock) -> (f64, f64) {
    let det = phi_q_s.determinant();
    let bound: f64 = phi_q_s.column_iter().map(|c| c.norm()).product();
    let ratio = if bound > 0.0 { det.abs() / bound } else { 0.0 };
    (det, ratio)
}

/// Velocity distribution matrix `[-(Phi_s)^-1 Phi_i ; I4]`.
pub fn r_star(geom: &PlatformGeometry, q: &FullCoordinates) -> Result<VelocityDistribution> {
    let (phi_q_s, phi_q_i) = split_jacobian(&constraint_jacobian(geom, q));
    r_star_from_blocks(&phi_q_s, &phi_q_i)
}

pub fn r_star_from_blocks(
    phi_q_s: &SecondaryBlock,
    phi_q_i: &IndependentBlock,
) -> Result<VelocityDistribution> {
    let (_, ratio) = secondary_determinant(phi_q_s);
    if !(ratio >= SINGULAR_RATIO) {
        return Err(Error::NearSingular { ratio });
    }
    let lu = phi_q_s.lu();
    let top = lu.solve(phi_q_i).ok_or(Error::NearSingular { ratio })?;
    let mut rs = VelocityDistribution::zeros();
    rs.fixed_rows_mut::<NS>(0).copy_from(&(-top));
    rs.fixed_rows_mut::<DOF>(NS).copy_from(&Matrix4::identity());
    Ok(rs)
}

pub fn jacobian_bundle(geom: &PlatformGeometry, q: &FullCoordinates) -> Result<JacobianBundle> {
    let phi = constraint_vector(geom, q);
    let phi_q = constraint_jacobian(geom, q);
    let (phi_q_s, phi_q_i) = split_jacobian(&phi_q);
    let r_star = r_star_from_blocks(&phi_q_s, &phi_q_i)?;
    let (phi_x, det_phi_x) = forward_jacobian(geom, &q.pose())?;
    Ok(JacobianBundle {
        phi,
        phi_q,
        phi_q_s,
        phi_q_i,
        r_star,
        phi_x,
        det_phi_x,
    })
}

/// Newton–Raphson settings for [`forward_kinematics`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FkOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_condition: f64,
}

impl Default for FkOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 50,
            max_condition: 1e12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FkSolution {
    pub pose: PlatformPose,
    pub angles: [f64; 7],
    pub coordinates: FullCoordinates,
    pub iterations: usize,
    pub residual: f64,
}

/// Solve the closure equations for the secondary coordinates given the
/// actuated lengths, starting from the assembly at `seed`.
pub fn forward_kinematics(
    geom: &PlatformGeometry,
    q_active: &Vector4<f64>,
    seed: &PlatformPose,
    opts: &FkOptions,
) -> Result<FkSolution> {
    check_lengths(q_active)?;
    let angles = solve_secondary_angles(geom, seed)?;
    let mut q = FullCoordinates::assemble(&angles, seed, q_active);
    let mut phi = constraint_vector(geom, &q);
    let mut residual = phi.amax();
    let mut iterations = 0;

    while residual >= opts.tolerance {
        if iterations == opts.max_iterations {
            return Err(Error::NoConvergence {
                iterations,
                residual,
            });
        }
        iterations += 1;
        let (phi_q_s, _) = split_jacobian(&constraint_jacobian(geom, &q));
        let sv = phi_q_s.singular_values();
        let condition = sv.max() / sv.min();
        if !(condition <= opts.max_condition) {
            return Err(Error::IllConditioned { condition });
        }
        let step = phi_q_s.lu().solve(&(-phi)).ok_or(Error::IllConditioned {
            condition: f64::INFINITY,
        })?;

        let base = q.secondary();
        let mut alpha = 1.0;
        loop {
            let mut trial = q;
            trial.set_secondary(&(base + step * alpha));
            let trial_phi = constraint_vector(geom, &trial);
            let trial_res = trial_phi.amax();
            if trial_res <= residual || alpha < 1.0 / 1024.0 {
                q = trial;
                phi = trial_phi;
                residual = trial_res;
                break;
            }
            alpha *= 0.5;
        }
    }

    Ok(FkSolution {
        pose: q.pose(),
        angles: q.angles(),
        coordinates: q,
        iterations,
        residual,
    })
}

/// `det(Phi_x)` at every pose of a path.
pub fn det_along_path(geom: &PlatformGeometry, poses: &[PlatformPose]) -> Result<Vec<f64>> {
    poses
        .iter()
        .enumerate()
        .map(|(k, p)| {
            forward_jacobian(geom, p)
                .map(|(_, det)| det)
                .map_err(|_| Error::UnreachablePose { index: Some(k) })
        })
        .collect()
}

/// Indices `k` such that the sign of `values` differs between `k` and `k + 1`.
pub fn sign_changes(values: &[f64]) -> Vec<usize> {
    values
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0].signum() != w[1].signum() || w[0] == 0.0 || w[1] == 0.0)
        .map(|(k, _)| k)
        .collect()
}

/// Platform normal (rotated `Z_m`) in the fixed frame.
pub fn platform_normal(pose: &PlatformPose) -> Vector3<f64> {
    rotation_matrix(pose).column(2).into_owned()
}
