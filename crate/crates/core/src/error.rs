use std::path::PathBuf;

use thiserror::Error;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad arguments or configuration values.
    Usage,
    /// Missing, malformed, or inconsistent data (files, shapes, checkpoints).
    Data,
    /// Non-finite values or other numeric breakdown.
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParam(_) | Error::Config(_) => ErrorKind::Usage,
            Error::NonFinite(_) => ErrorKind::Numeric,
            Error::Shape(_)
            | Error::Data(_)
            | Error::Checkpoint(_)
            | Error::Io { .. }
            | Error::Image { .. } => ErrorKind::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
