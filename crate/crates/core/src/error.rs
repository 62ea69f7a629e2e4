use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the library.
///
/// Variants are grouped by [`ErrorKind`] so that front ends can map them onto
/// stable exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("HFC/LFC ratio undefined: low band carries no energy")]
    UndefinedRatio,

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dataset is empty after {0}")]
    EmptyDataset(String),

    #[error("no ranks to evaluate")]
    EmptyEvaluation,

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("non-finite gradient in parameter `{name}` (first bad entry at flat index {index}: {value})")]
    NonFiniteGradient {
        name: String,
        index: usize,
        value: f64,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification of an [`Error`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) | Error::InvalidConfig(_) | Error::Checkpoint(_) => {
                ErrorKind::Config
            }
            Error::Parse { .. }
            | Error::InvalidInput(_)
            | Error::EmptyDataset(_)
            | Error::EmptyEvaluation
            | Error::Io { .. } => ErrorKind::Data,
            Error::UndefinedRatio | Error::InvalidState(_) | Error::NonFiniteGradient { .. } => {
                ErrorKind::Numeric
            }
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
