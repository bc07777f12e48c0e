//! Fixed-step integration of the coupled hidden/weight system.
//!
//! The weight process is deterministic outside the window `(t₁, t₂)` and
//! follows the posterior SDE inside it; the hidden state always follows the
//! ODE driven by the current weights. Everything is recorded on a
//! [`Tape`](crate::autodiff::Tape) so gradients flow through the unrolled
//! steps.

mod brownian;
mod integrate;
mod schedule;
mod steps;

pub use brownian::{derive_seed, sample_brownian, BrownianPath};
pub use integrate::{integrate_joint, IntegrateOptions, JointInputs, JointOutput, PathRecord};
pub use schedule::{HorizontalCut, JumpMode, RegimeSchedule, Scheme, Step, StepGrid};
pub use steps::{deterministic_step, em_step, euler_step, midpoint_step, rk4_step};
