//! Crate-wide error type. Every fallible public entry point returns [`Result`].

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shapes are incompatible for the requested operation.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A tensor argument violates an operation precondition.
    #[error("invalid argument to {op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    /// Configuration file or flag is malformed or out of range.
    #[error("config error: {0}")]
    Config(String),

    /// A serialized artifact (tensor file, checkpoint, PGM, WAV, manifest) is malformed.
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    /// Audio input violates a frontend precondition.
    #[error("audio error: {0}")]
    Audio(String),

    /// Dataset or metric input is unusable.
    #[error("data error: {0}")]
    Data(String),

    /// Training diverged or was given an unusable setup.
    #[error("training error: {0}")]
    Train(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
