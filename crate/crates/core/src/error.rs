use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the network, data, training and evaluation code.
#[derive(Debug, Error)]
pub enum FmsrError {
    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("{op}: {msg}")]
    Domain { op: &'static str, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite value in `{name}`{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite { name: String, step: Option<usize> },
}

pub type Result<T, E = FmsrError> = std::result::Result<T, E>;

impl FmsrError {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        FmsrError::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FmsrError::Io {
            path: path.into(),
            source,
        }
    }
}
