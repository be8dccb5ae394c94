//! Co-design of intrinsic dynamics that minimizes the directed information
//! a feedback controller needs, subject to a bound on expected task cost.
//!
//! The pipeline is: linearize a nonlinear plant along a reference
//! ([`model`]), propagate EKF belief covariances and evaluate directed
//! information and its design gradient ([`infoflow`]), solve a partially
//! observed iLQG problem for the controller and value of information
//! ([`ilqg`]), then take barrier-penalized gradient steps on the design
//! parameters ([`codesign`]). Benchmark plants and experiment drivers live
//! in [`systems`].

// `!(a < b)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codesign;
pub mod error;
pub mod ilqg;
pub mod infoflow;
pub mod linalg;
pub mod model;
pub mod systems;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use model::{CostModel, Dims, LtvApprox, NominalTrajectory, NoiseSchedule, SystemModel};
