use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite value at output index {index} during evaluation")]
    NonFinite { index: usize },

    #[error("unknown environment `{name}` (valid: {valid})")]
    UnknownEnv { name: String, valid: String },

    #[error("environment `{env}` has no parameter `{param}` (valid: {valid})")]
    UnknownParam {
        env: String,
        param: String,
        valid: String,
    },

    #[error("simulation diverged at step {t}: state component {index} is non-finite")]
    Divergence { t: usize, index: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: {msg}")]
    TrainingDivergence {
        epoch: usize,
        batch: usize,
        msg: String,
    },

    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },

    #[error("loss mode `{0}` requires ground-truth Jacobians")]
    MissingJacobians(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
