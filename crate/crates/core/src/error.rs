use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the recommendation pipeline.
///
/// Variants are grouped so that front ends can map them onto a small set of
/// exit statuses: configuration problems, data problems and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("backward already ran on this recording")]
    BackwardTwice,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Io { .. } | Error::Parse { .. } | Error::Data(_) | Error::Checkpoint(_) => {
                ErrorKind::Data
            }
            Error::Shape { .. } | Error::NonFinite(_) | Error::BackwardTwice => ErrorKind::Numeric,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
