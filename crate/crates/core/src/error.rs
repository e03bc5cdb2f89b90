use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("numeric fault at layer {layer}: {detail}")]
    NumericFault { layer: usize, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged in {stage} at iteration {iteration}: {detail}")]
    Diverged {
        stage: &'static str,
        iteration: usize,
        detail: String,
    },

    #[error("malformed {format} file: {detail}")]
    Format { format: &'static str, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
