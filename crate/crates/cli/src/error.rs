use std::path::Path;

use thiserror::Error;

/// Failure classes, one per process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// bad config, bad or missing inputs, I/O, lock contention
    #[error("{0}")]
    Validation(String),
    /// NaN, tolerance exceeded, integrator or tracker breakdown
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// a claim check failed outright
    #[error("claim violated: {0}")]
    Claim(String),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Validation(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Claim(_) => 3,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Validation(format!("csv: {e}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(format!("i/o: {e}"))
    }
}

impl From<sqg_core::io::ContainerError> for CliError {
    fn from(e: sqg_core::io::ContainerError) -> Self {
        CliError::Validation(format!("container: {e}"))
    }
}
