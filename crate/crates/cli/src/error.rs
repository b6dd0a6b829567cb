use bddtext::Error;
use thiserror::Error as ThisError;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Missing(String),

    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Core(e) => match e {
                Error::Numerical(_) => 4,
                Error::Io { .. } | Error::Checkpoint(_) => 3,
                _ => 2,
            },
        }
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn missing(msg: impl Into<String>) -> CliError {
    CliError::Missing(msg.into())
}
