//! Online selection of controller parameters for time-varying systems.
//!
//! The main entry points are [`gaps::run_gaps`] for gradient-based tuning of a
//! continuous parameter and [`baps::run_baps`] for bandit selection among a
//! finite set. [`metrics`] and [`contraction`] measure how well either did and
//! whether a system meets the stability conditions both rely on.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baps;
pub mod contraction;
pub mod envs;
pub mod error;
pub mod gaps;
pub mod linalg;
pub mod metrics;
pub mod oracles;
pub mod rng;
pub mod system;

#[cfg(any(test, feature = "test-oracles"))]
pub mod test_oracles;

pub use error::{Error, Result};
pub use gaps::{run_gaps, GapsConfig, GapsState};
pub use system::{ControlSystem, Dims, ParameterSet, StepJacobians, Trajectory};
