use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are inconsistent with an operation's contract.
    #[error("shape error: {0}")]
    Shape(String),

    /// An input value violates an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A class label lies outside the supported set.
    #[error("invalid label {label}, expected 0 or 1")]
    InvalidLabel { label: usize },

    /// A parameter is outside its documented range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A run configuration failed validation. The message names the offending key.
    #[error("configuration error: {0}")]
    Config(String),

    /// A binary container did not parse; `offset` is the byte position of the failure.
    #[error("format error at byte {offset}: {what}")]
    Format { offset: u64, what: String },

    /// A checkpoint does not match the model it is being loaded for.
    #[error("incompatible checkpoint: {0}")]
    Checkpoint(String),

    /// A gradient or activation became non-finite during optimization.
    #[error("non-finite value in tensor '{tensor}': {what}")]
    NonFinite { tensor: String, what: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// True for errors a user fixes by editing inputs/config (CLI exit code 1);
    /// everything else is a runtime failure (exit code 2).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Parameter(_) | Error::InvalidInput(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
