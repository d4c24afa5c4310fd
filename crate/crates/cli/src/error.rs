use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

/// Process exit statuses.
pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed config, unmet stage dependency, or bad arguments.
    #[error("{0}")]
    Validation(String),

    #[error(transparent)]
    Core(#[from] repscope_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        CliError::Csv {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use repscope_core::Error as E;
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Core(e) => match e {
                E::Numeric(_) | E::NonFinite { .. } => EXIT_NUMERIC,
                E::Io { .. } => EXIT_IO,
                E::InvalidInput(_) | E::Format { .. } | E::Json { .. } => EXIT_VALIDATION,
            },
            CliError::Io { .. } => EXIT_IO,
            CliError::Csv { source, .. } => {
                if source.is_io_error() {
                    EXIT_IO
                } else {
                    EXIT_VALIDATION
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(CliError::validation("x").exit_code(), EXIT_VALIDATION);
        let numeric = CliError::from(repscope_core::Error::Numeric("diverged".into()));
        assert_eq!(numeric.exit_code(), EXIT_NUMERIC);
        let io = CliError::io("/nope", std::io::Error::new(std::io::ErrorKind::NotFound, "gone"));
        assert_eq!(io.exit_code(), EXIT_IO);
        let nan = CliError::from(repscope_core::Error::NonFinite { row: 0, col: 1 });
        assert_eq!(nan.exit_code(), EXIT_NUMERIC);
    }
}
