//! File formats, configuration and commands around `resflow-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod movielens;
pub mod report;

pub use error::{CliError, CliResult};
