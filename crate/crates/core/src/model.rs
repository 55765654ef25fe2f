//! Domain types of the 3UPS/RPU manipulator and the anchor geometry that
//! ties a platform geometry and a pose to limb vectors.
//!
//! Frames: the fixed frame has its origin at the centre of the base circle
//! with `Z` pointing up. The mobile frame origin moves in the fixed `XZ`
//! plane; its orientation is a rotation `theta` about `Y` followed by a
//! rotation `psi` about the rotated `Z` axis, `R = Ry(theta) * Rz(psi)`.
//!
//! Anchor layout (all radii measured from the frame origins):
//!
//! | limb | base anchor                      | platform anchor (mobile frame)        |
//! |------|----------------------------------|---------------------------------------|
//! | 1    | `(-R, 0, 0)`                     | `(-Rm, 0, 0)`                         |
//! | 2    | `(R cos bFD, R sin bFD, 0)`      | `(Rm cos bMD, Rm sin bMD, 0)`         |
//! | 3    | `(R cos bFI, -R sin bFI, 0)`     | `(Rm cos bMI, -Rm sin bMI, 0)`        |
//! | 4    | `(ds, 0, 0)`                     | origin                                |

use nalgebra::{Matrix3, SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::round_sig;

/// Number of prismatic limbs.
pub const LIMBS: usize = 4;
/// Size of the dependent coordinate vector.
pub const NQ: usize = 15;
/// Number of secondary coordinates (and constraint equations).
pub const NS: usize = 11;
/// Degrees of freedom.
pub const DOF: usize = 4;

/// Limb lengths below this are treated as geometrically impossible.
pub const MIN_LIMB_LENGTH: f64 = 1e-9;

/// The seven reconfigurable geometric parameters. Angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "GeometryDoc", into = "GeometryDoc")]
pub struct PlatformGeometry {
    /// Radius of the base anchor circle (m).
    pub r: f64,
    /// Radius of the platform anchor circle (m).
    pub rm: f64,
    /// Offset of the central limb base along the fixed `X` axis (m).
    pub ds: f64,
    pub beta_fd: f64,
    pub beta_fi: f64,
    pub beta_md: f64,
    pub beta_mi: f64,
}

/// On-disk form: field names as documented, angles in degrees.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeometryDoc {
    #[serde(rename = "R")]
    r: f64,
    #[serde(rename = "Rm")]
    rm: f64,
    ds: f64,
    #[serde(rename = "betaFD")]
    beta_fd: f64,
    #[serde(rename = "betaFI")]
    beta_fi: f64,
    #[serde(rename = "betaMD")]
    beta_md: f64,
    #[serde(rename = "betaMI")]
    beta_mi: f64,
}

impl From<GeometryDoc> for PlatformGeometry {
    fn from(d: GeometryDoc) -> Self {
        Self {
            r: d.r,
            rm: d.rm,
            ds: d.ds,
            beta_fd: d.beta_fd.to_radians(),
            beta_fi: d.beta_fi.to_radians(),
            beta_md: d.beta_md.to_radians(),
            beta_mi: d.beta_mi.to_radians(),
        }
    }
}

impl From<PlatformGeometry> for GeometryDoc {
    fn from(g: PlatformGeometry) -> Self {
        Self {
            r: g.r,
            rm: g.rm,
            ds: g.ds,
            beta_fd: round_sig(g.beta_fd.to_degrees()),
            beta_fi: round_sig(g.beta_fi.to_degrees()),
            beta_md: round_sig(g.beta_md.to_degrees()),
            beta_mi: round_sig(g.beta_mi.to_degrees()),
        }
    }
}

impl PlatformGeometry {
    /// Layout of the original prototype, before any reconfiguration.
    pub fn initial() -> Self {
        Self {
            r: 0.4,
            rm: 0.2,
            ds: 0.0,
            beta_fd: 50f64.to_radians(),
            beta_fi: 40f64.to_radians(),
            beta_md: 30f64.to_radians(),
            beta_mi: 40f64.to_radians(),
        }
    }

    /// Build from the seven-vector `(R, Rm, ds, bFD, bFI, bMD, bMI)`.
    pub fn from_array(v: [f64; 7]) -> Self {
        Self {
            r: v[0],
            rm: v[1],
            ds: v[2],
            beta_fd: v[3],
            beta_fi: v[4],
            beta_md: v[5],
            beta_mi: v[6],
        }
    }

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.r,
            self.rm,
            self.ds,
            self.beta_fd,
            self.beta_fi,
            self.beta_md,
            self.beta_mi,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !self.to_array().iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid("geometry has non-finite fields".into()));
        }
        if self.r <= 0.0 || self.rm <= 0.0 {
            return Err(Error::Invalid("geometry radii must be positive".into()));
        }
        Ok(())
    }

    /// Base anchors in the fixed frame.
    pub fn base_anchors(&self) -> [Vector3<f64>; LIMBS] {
        let r = self.r;
        [
            Vector3::new(-r, 0.0, 0.0),
            Vector3::new(r * self.beta_fd.cos(), r * self.beta_fd.sin(), 0.0),
            Vector3::new(r * self.beta_fi.cos(), -r * self.beta_fi.sin(), 0.0),
            Vector3::new(self.ds, 0.0, 0.0),
        ]
    }

    /// Platform anchors expressed in the mobile frame.
    pub fn platform_anchors_local(&self) -> [Vector3<f64>; LIMBS] {
        let rm = self.rm;
        [
            Vector3::new(-rm, 0.0, 0.0),
            Vector3::new(rm * self.beta_md.cos(), rm * self.beta_md.sin(), 0.0),
            Vector3::new(rm * self.beta_mi.cos(), -rm * self.beta_mi.sin(), 0.0),
            Vector3::zeros(),
        ]
    }
}

/// Task coordinates of the mobile platform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlatformPose {
    pub xm: f64,
    pub zm: f64,
    /// Rotation about the mobile `Y` axis (rad).
    pub theta: f64,
    /// Rotation about the mobile `Z` axis (rad).
    pub psi: f64,
}

impl PlatformPose {
    pub fn new(xm: f64, zm: f64, theta: f64, psi: f64) -> Self {
        Self { xm, zm, theta, psi }
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.xm, self.zm, self.theta, self.psi)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn origin(&self) -> Vector3<f64> {
        Vector3::new(self.xm, 0.0, self.zm)
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// Dependent coordinates ordered as
/// `[q11, q12, q21, q22, q31, q32, q41 | xm, zm, theta, psi | q13, q23, q33, q42]`.
/// The first eleven are secondary, the last four are the actuated lengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullCoordinates(pub SVector<f64, NQ>);

impl FullCoordinates {
    pub const XM: usize = 7;
    pub const ZM: usize = 8;
    pub const THETA: usize = 9;
    pub const PSI: usize = 10;

    /// Index of the actuated length of `limb` (0-based).
    pub const fn length_index(limb: usize) -> usize {
        NS + limb
    }

    /// Index of the first joint angle of `limb`; lateral limbs own two
    /// consecutive angles, the central limb one.
    pub const fn angle_index(limb: usize) -> usize {
        2 * limb
    }

    pub fn assemble(angles: &[f64; 7], pose: &PlatformPose, lengths: &Vector4<f64>) -> Self {
        let mut q = SVector::<f64, NQ>::zeros();
        for (k, a) in angles.iter().enumerate() {
            q[k] = *a;
        }
        q[Self::XM] = pose.xm;
        q[Self::ZM] = pose.zm;
        q[Self::THETA] = pose.theta;
        q[Self::PSI] = pose.psi;
        for i in 0..LIMBS {
            q[Self::length_index(i)] = lengths[i];
        }
        Self(q)
    }

    pub fn pose(&self) -> PlatformPose {
        PlatformPose::new(
            self.0[Self::XM],
            self.0[Self::ZM],
            self.0[Self::THETA],
            self.0[Self::PSI],
        )
    }

    pub fn lengths(&self) -> Vector4<f64> {
        Vector4::new(self.0[11], self.0[12], self.0[13], self.0[14])
    }

    pub fn angles(&self) -> [f64; 7] {
        let mut a = [0.0; 7];
        a.copy_from_slice(&self.0.as_slice()[..7]);
        a
    }

    pub fn secondary(&self) -> SVector<f64, NS> {
        self.0.fixed_rows::<NS>(0).into_owned()
    }

    pub fn set_secondary(&mut self, s: &SVector<f64, NS>) {
        self.0.fixed_rows_mut::<NS>(0).copy_from(s);
    }
}

/// Masses, friction and actuator limits. Per-limb arrays are ordered 1..4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalParams {
    pub mass_cyl: [f64; LIMBS],
    pub mass_rod: [f64; LIMBS],
    /// Cylinder CoM distance from the base anchor along the limb (m).
    pub com_cyl: [f64; LIMBS],
    /// Rod CoM distance from the platform anchor towards the base (m).
    pub com_rod: [f64; LIMBS],
    pub mass_platform: f64,
    /// Platform CoM in the mobile frame (m).
    pub com_platform: [f64; 3],
    pub mu_c: [f64; LIMBS],
    pub mu_v: [f64; LIMBS],
    pub g: f64,
    pub l_min: f64,
    pub l_max: f64,
    /// Maximum limb inclination w.r.t. the platform normal. Radians in
    /// memory, degrees on disk.
    #[serde(with = "degrees")]
    pub alpha_max: f64,
    /// Application point of the external wrench in the mobile frame (m).
    pub d_point: [f64; 3],
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self {
            mass_cyl: [2.0; LIMBS],
            mass_rod: [1.0; LIMBS],
            com_cyl: [0.15; LIMBS],
            com_rod: [0.15; LIMBS],
            mass_platform: 8.0,
            com_platform: [0.0; 3],
            mu_c: [40.0; LIMBS],
            mu_v: [100.0; LIMBS],
            g: 9.81,
            l_min: 0.45,
            l_max: 0.85,
            alpha_max: std::f64::consts::FRAC_PI_4,
            d_point: [0.0; 3],
        }
    }
}

impl PhysicalParams {
    /// No mass, no friction: every generalized force vanishes.
    pub fn massless() -> Self {
        Self {
            mass_cyl: [0.0; LIMBS],
            mass_rod: [0.0; LIMBS],
            mass_platform: 0.0,
            mu_c: [0.0; LIMBS],
            mu_v: [0.0; LIMBS],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let masses = self
            .mass_cyl
            .iter()
            .chain(&self.mass_rod)
            .chain(std::iter::once(&self.mass_platform));
        if masses.into_iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::Invalid("masses must be non-negative".into()));
        }
        if self.mu_c.iter().chain(&self.mu_v).any(|m| !(*m >= 0.0)) {
            return Err(Error::Invalid(
                "friction coefficients must be non-negative".into(),
            ));
        }
        if !(self.l_min > 0.0 && self.l_min < self.l_max) {
            return Err(Error::Invalid(
                "stroke limits must satisfy 0 < l_min < l_max".into(),
            ));
        }
        if !(self.alpha_max > 0.0 && self.alpha_max < std::f64::consts::FRAC_PI_2) {
            return Err(Error::Invalid(
                "alpha_max must lie in (0, 90) degrees".into(),
            ));
        }
        if !self.g.is_finite() {
            return Err(Error::Invalid("g must be finite".into()));
        }
        Ok(())
    }

    pub fn platform_com(&self) -> Vector3<f64> {
        Vector3::from(self.com_platform)
    }

    pub fn force_point(&self) -> Vector3<f64> {
        Vector3::from(self.d_point)
    }
}

mod degrees {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(crate::report::round_sig(v.to_degrees()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        f64::deserialize(d).map(f64::to_radians)
    }
}

/// External force and torque applied by the patient, both in the mobile frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalWrench {
    pub force: [f64; 3],
    #[serde(default)]
    pub torque: [f64; 3],
}

impl ExternalWrench {
    pub fn force(f: [f64; 3]) -> Self {
        Self {
            force: f,
            torque: [0.0; 3],
        }
    }

    pub fn zero() -> Self {
        Self::default()
    }
}

/// Orientation of the mobile frame, `Ry(theta) * Rz(psi)`.
pub fn rotation_matrix(pose: &PlatformPose) -> Matrix3<f64> {
    let (st, ct) = pose.theta.sin_cos();
    let (sp, cp) = pose.psi.sin_cos();
    Matrix3::new(
        ct * cp,
        -ct * sp,
        st, //
        sp,
        cp,
        0.0, //
        -st * cp,
        st * sp,
        ct,
    )
}

/// Partial derivatives of [`rotation_matrix`] w.r.t. `theta` and `psi`.
pub fn rotation_partials(pose: &PlatformPose) -> (Matrix3<f64>, Matrix3<f64>) {
    let (st, ct) = pose.theta.sin_cos();
    let (sp, cp) = pose.psi.sin_cos();
    let d_theta = Matrix3::new(
        -st * cp,
        st * sp,
        ct, //
        0.0,
        0.0,
        0.0, //
        -ct * cp,
        ct * sp,
        -st,
    );
    let d_psi = Matrix3::new(
        -ct * sp,
        -ct * cp,
        0.0, //
        cp,
        -sp,
        0.0, //
        st * sp,
        st * cp,
        0.0,
    );
    (d_theta, d_psi)
}

/// Base and platform anchors in the fixed frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchors {
    pub base: [Vector3<f64>; LIMBS],
    pub platform: [Vector3<f64>; LIMBS],
}

impl Anchors {
    pub fn limb_vector(&self, limb: usize) -> Vector3<f64> {
        self.platform[limb] - self.base[limb]
    }
}

pub fn anchor_points(geom: &PlatformGeometry, pose: &PlatformPose) -> Anchors {
    let rot = rotation_matrix(pose);
    let origin = pose.origin();
    let local = geom.platform_anchors_local();
    Anchors {
        base: geom.base_anchors(),
        platform: local.map(|a| origin + rot * a),
    }
}

/// Unit limb axes pointing from base to platform.
pub fn limb_axes(geom: &PlatformGeometry, pose: &PlatformPose) -> Result<[Vector3<f64>; LIMBS]> {
    let anchors = anchor_points(geom, pose);
    let mut axes = [Vector3::zeros(); LIMBS];
    for (i, axis) in axes.iter_mut().enumerate() {
        let v = anchors.limb_vector(i);
        let length = v.norm();
        if !(length > MIN_LIMB_LENGTH) {
            return Err(Error::DegenerateLimb {
                limb: i + 1,
                length,
            });
        }
        *axis = v / length;
    }
    Ok(axes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn symmetric_pose_limb_lengths() {
        let g = PlatformGeometry::initial();
        let a = anchor_points(&g, &PlatformPose::new(0.0, 0.5, 0.0, 0.0));
        assert_relative_eq!(a.limb_vector(0).norm(), 0.29f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(a.limb_vector(3).norm(), 0.5, epsilon = 1e-15);
        assert_eq!(a.base[3], Vector3::new(0.0, 0.0, 0.0));
    }

    #[test]
    fn central_axis() {
        let g = PlatformGeometry::initial();
        let u = limb_axes(&g, &PlatformPose::new(0.0, 0.5, 0.0, 0.0)).unwrap();
        assert_relative_eq!(u[3], Vector3::z(), epsilon = 1e-15);
        let u = limb_axes(&g, &PlatformPose::new(0.1, 0.4, 0.0, 0.0)).unwrap();
        assert_relative_eq!(
            u[3],
            Vector3::new(0.1, 0.0, 0.4) / 0.17f64.sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn coincident_anchors_are_degenerate() {
        let g = PlatformGeometry {
            rm: 0.4,
            ..PlatformGeometry::initial()
        };
        let err = limb_axes(&g, &PlatformPose::new(0.0, 0.0, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::DegenerateLimb { limb: 1, .. }));
    }

    #[test]
    fn rotation_is_proper() {
        assert_eq!(
            rotation_matrix(&PlatformPose::new(0.0, 0.0, 0.0, 0.0)),
            Matrix3::identity()
        );
        for (t, p) in [(0.3, -0.7), (-1.2, 2.0), (3.0, 0.1)] {
            let r = rotation_matrix(&PlatformPose::new(0.0, 0.0, t, p));
            assert_relative_eq!(r.transpose() * r, Matrix3::identity(), epsilon = 1e-12);
            assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rotation_partials_match_differences() {
        let pose = PlatformPose::new(0.0, 0.0, 0.4, -0.9);
        let (dt, dp) = rotation_partials(&pose);
        let h = 1e-6;
        let fd = |f: &dyn Fn(f64) -> PlatformPose| {
            (rotation_matrix(&f(h)) - rotation_matrix(&f(-h))) / (2.0 * h)
        };
        assert_relative_eq!(
            dt,
            fd(&|e| PlatformPose {
                theta: pose.theta + e,
                ..pose
            }),
            epsilon = 1e-9
        );
        assert_relative_eq!(
            dp,
            fd(&|e| PlatformPose {
                psi: pose.psi + e,
                ..pose
            }),
            epsilon = 1e-9
        );
    }

    #[test]
    fn geometry_json_uses_degrees() {
        let g = PlatformGeometry::initial();
        let s = serde_json::to_string(&g).unwrap();
        assert!(s.contains("\"betaFD\":50"), "{s}");
        let back: PlatformGeometry = serde_json::from_str(&s).unwrap();
        assert_relative_eq!(back.beta_fd, g.beta_fd, epsilon = 1e-15);
    }

    #[test]
    fn physical_defaults_fill_missing_fields() {
        let p: PhysicalParams = serde_json::from_str(r#"{"g": 0.0, "alpha_max": 30}"#).unwrap();
        assert_eq!(p.g, 0.0);
        assert_relative_eq!(p.alpha_max, 30f64.to_radians());
        assert_eq!(p.l_min, 0.45);
        p.validate().unwrap();
        assert!(PhysicalParams { l_min: 0.9, ..p }.validate().is_err());
    }
}
