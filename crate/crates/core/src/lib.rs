//! Modelling and geometry reconfiguration of a 3UPS/RPU parallel manipulator
//! with two translational and two rotational degrees of freedom.
//!
//! The crate covers closed-form inverse kinematics, the loop-closure
//! Jacobians and Newton–Raphson forward kinematics ([`kinematics`]),
//! quasi-static inverse dynamics by coordinate partitioning ([`statics`]),
//! the rehabilitation test trajectories ([`trajectory`]) and the two-stage
//! anchor-point optimization that minimizes actuator forces while keeping
//! the forward Jacobian away from singularity ([`optimizer`]).
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod cli;
pub mod error;
pub mod kinematics;
pub mod model;
pub mod optimizer;
pub mod report;
pub mod statics;
pub mod trajectory;

pub use error::{Error, Result};
pub use model::{ExternalWrench, FullCoordinates, PhysicalParams, PlatformGeometry, PlatformPose};
