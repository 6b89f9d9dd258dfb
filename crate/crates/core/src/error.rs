use std::path::PathBuf;

use thiserror::Error;

use crate::train::TrainLog;

pub type Result<T, E = EarError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EarError {
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("AUC undefined: {0}")]
    UndefinedAuc(String),

    #[error("vocabulary does not match checkpoint (expected hash {expected}, found {found})")]
    VocabMismatch { expected: String, found: String },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}: non-finite {term}")]
    Diverged {
        epoch: usize,
        term: String,
        log: Box<TrainLog>,
    },
}

impl EarError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EarError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        EarError::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input (missing files, malformed
    /// rows, inconsistent arguments) rather than internal failures.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            EarError::Io { .. }
                | EarError::Parse { .. }
                | EarError::InvalidInput(_)
                | EarError::VocabMismatch { .. }
                | EarError::Checkpoint(_)
        )
    }
}
