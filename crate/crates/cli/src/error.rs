use thiserror::Error;

use tempocoh::data::DataError;
use tempocoh::models::checkpoint::CheckpointError;
use tempocoh::models::ModelError;

/// Failures mapped onto process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("numeric abort at epoch {epoch}, batch {batch}: {detail}")]
    Numeric { epoch: usize, batch: usize, detail: String },
    #[error("input mismatch: {0}")]
    Mismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric { .. } => 4,
            CliError::Mismatch(_) => 5,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Config(m) => CliError::Usage(m),
            DataError::Mismatch(m) => CliError::Mismatch(m),
            other => CliError::Io(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NumericAbort { epoch, batch, detail } => CliError::Numeric { epoch, batch, detail },
            ModelError::Config(m) => CliError::Usage(m),
            other => CliError::Mismatch(other.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Model(m) => m.into(),
            other => CliError::Io(other.to_string()),
        }
    }
}
