use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid configuration for `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("invalid model state: {0}")]
    State(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("format error at byte offset {offset}: {reason}")]
    Format { offset: u64, reason: String },
    #[error("incompatible snapshot: expected fingerprint {expected:016x}, found {found:016x}")]
    Compatibility { expected: u64, found: u64 },
    #[error("probe error: {0}")]
    Probe(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
