use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid {n1}x{n2}: {reason}")]
    InvalidGrid {
        n1: usize,
        n2: usize,
        reason: &'static str,
    },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
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
    #[error("{label}: {source}")]
    Model {
        label: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Numerical(_) | Error::NonFinite(_) => true,
            Error::Model { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::InvalidGrid { .. } | Error::InvalidArgument(_) => true,
            Error::Model { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
