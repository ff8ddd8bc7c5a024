//! Command-line driver for the hyperbolic temporal graph models: training,
//! evaluation, curvature sweeps and dataset preparation.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;

pub use error::CliError;
