//! Experiment runner library behind the `moda` binary: configuration,
//! training runs, sweeps, over-training studies, and bound reports.

pub mod bound;
pub mod config;
pub mod runner;
pub mod sweep;

use thiserror::Error;

/// CLI failure classes, mapped to exit codes by the binary: configuration
/// errors exit 1, runtime failures exit 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<moda_core::Error> for CliError {
    fn from(e: moda_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
