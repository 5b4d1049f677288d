//! Configuration ingestion, experiment orchestration, and CSV emission for
//! the polling-system toolkit.

pub mod config;
pub mod experiment;
pub mod output;

use pollsys::model::ValidationReport;

/// CLI-level errors, each with a distinct process exit code:
/// configuration and validation problems exit 2, numeric non-convergence
/// exits 3, I/O failures exit 4.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation failed: {0}")]
    Validation(ValidationReport),

    #[error("numeric failure: {0}")]
    NonConvergence(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Validation(_) => 2,
            CliError::NonConvergence(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<pollsys::Error> for CliError {
    fn from(err: pollsys::Error) -> Self {
        match err {
            pollsys::Error::Inadmissible(report) => CliError::Validation(report),
            e @ (pollsys::Error::NonConvergence { .. } | pollsys::Error::Divergence { .. }) => {
                CliError::NonConvergence(e.to_string())
            }
            e => CliError::Config(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
