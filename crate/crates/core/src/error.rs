use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FiltError {
    #[error("{source_name}:{line}: {msg}")]
    Parse {
        source_name: String,
        line: usize,
        msg: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("non-finite gradient in tensor `{0}`")]
    NonFiniteGradient(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("checkpoint {field}: {msg}")]
    Checkpoint { field: String, msg: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl FiltError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FiltError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn checkpoint(field: impl Into<String>, msg: impl Into<String>) -> Self {
        FiltError::Checkpoint {
            field: field.into(),
            msg: msg.into(),
        }
    }

    /// True for failures of the numerics (NaN losses, bad gradients) as
    /// opposed to usage or I/O problems.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            FiltError::NonFiniteGradient(_) | FiltError::Numeric(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, FiltError>;
