use lrd_core::LrdError;
use thiserror::Error;

/// Failure categories, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),

    #[error(transparent)]
    Numeric(LrdError),

    #[error("{0}")]
    Config(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Config(_) => 4,
        }
    }

    pub fn io(context: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{context}: {err}"))
    }
}

impl From<LrdError> for CliError {
    fn from(e: LrdError) -> Self {
        match e {
            LrdError::InvalidParameter { .. } | LrdError::EmptyTrimmedRange { .. } | LrdError::MemoryDomain(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Numeric(other),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
