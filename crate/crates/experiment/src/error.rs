//! Harness error type with CLI exit-code mapping.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] fstl_core::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{msg}")]
    Dataset { msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{failed} of {total} sweep cells failed")]
    CellFailures { failed: usize, total: usize },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn dataset(msg: impl Into<String>) -> Self {
        Error::Dataset { msg: msg.into() }
    }

    /// Process exit code: 1 for configuration errors, 2 for runtime
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Core(fstl_core::Error::InvalidConfig(_)) => 1,
            _ => 2,
        }
    }
}
