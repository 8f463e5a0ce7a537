use std::path::PathBuf;

use thiserror::Error;

use crate::data::ModelState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Dataset or label structure does not match the declared categories.
    #[error("schema error: {0}")]
    Schema(String),

    /// A hyperparameter or argument is outside its valid range.
    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A numeric failure during the outer loop. Carries the last state that
    /// passed all checks so callers can still persist it.
    #[error("fit aborted after {iters} iterations: {source}")]
    FitAborted {
        iters: usize,
        #[source]
        source: Box<Error>,
        last_state: Box<ModelState>,
    },
}

impl Error {
    pub fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }

    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used in CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::Parameter(_) => "parameter",
            Error::Numeric(_) => "numeric",
            Error::Version { .. } => "version",
            Error::Io { .. } => "io",
            Error::FitAborted { .. } => "numeric",
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Schema(_) | Error::Parameter(_) | Error::Version { .. } => 2,
            Error::Numeric(_) | Error::FitAborted { .. } => 3,
            Error::Io { .. } => 4,
        }
    }
}
