use thiserror::Error;

/// Failures raised by the kinematic, static and trajectory routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A limb length collapsed below the numerical threshold.
    #[error("limb {limb} is degenerate (length {length:.3e} m)")]
    DegenerateLimb { limb: usize, length: f64 },

    /// The pose cannot be reached by the given geometry.
    #[error("pose unreachable{}", index.map(|i| format!(" at via point {i}")).unwrap_or_default())]
    UnreachablePose { index: Option<usize> },

    /// The secondary block of the constraint Jacobian is (numerically) singular.
    #[error("configuration is near a forward singularity (relative det {ratio:.3e})")]
    NearSingular { ratio: f64 },

    #[error("forward kinematics did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("forward kinematics iteration matrix is ill-conditioned (condition {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("ellipse law undefined at t = {t} s (|x/b| = {ratio})")]
    EllipseDomain { t: f64, ratio: f64 },

    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
