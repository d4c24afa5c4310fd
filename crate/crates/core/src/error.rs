use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on the arguments was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A matrix contained NaN or infinity.
    #[error("non-finite value at ({row},{col})")]
    NonFinite { row: usize, col: usize },

    /// An on-disk artifact did not conform to its format.
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    /// An optimizer diverged or produced NaN.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
