//! Experiment driver: configuration, data generation, training runs,
//! sweeps and plot-ready reports.

pub mod commands;
pub mod config;
pub mod error;

pub use config::{ExperimentConfig, Overrides, Toggle};
pub use error::{CliError, Result};
