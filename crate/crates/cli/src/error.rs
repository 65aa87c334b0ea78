use std::path::PathBuf;

use mixsched::ErrorClass;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{what} not found: {}", path.display())]
    NotFound { what: &'static str, path: PathBuf },

    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Input {
        path: PathBuf,
        #[source]
        source: mixsched::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Validation(String),

    #[error(transparent)]
    Engine(#[from] mixsched::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NotFound { .. } | CliError::Io { .. } => EXIT_IO,
            CliError::Input { source, .. } | CliError::Engine(source) => match source.class() {
                ErrorClass::Io => EXIT_IO,
                ErrorClass::Validation => EXIT_VALIDATION,
                ErrorClass::Internal => EXIT_INTERNAL,
            },
            CliError::Config(_) | CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn input(path: impl Into<PathBuf>, source: impl Into<mixsched::Error>) -> Self {
        CliError::Input {
            path: path.into(),
            source: source.into(),
        }
    }
}
