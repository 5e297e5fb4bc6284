//! Config-driven experiment runner for the `gaps` library.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
pub mod validate;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
