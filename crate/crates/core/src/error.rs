use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
///
/// The CLI maps these onto process exit codes: configuration/usage
/// problems exit 2, capacity violations 3, numerical failures 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("capacity exceeded: {what} ({size} > cap {cap})")]
    Capacity {
        what: &'static str,
        size: usize,
        cap: usize,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
