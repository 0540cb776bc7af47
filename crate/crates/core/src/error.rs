use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = LsboError> = std::result::Result<T, E>;

/// Every failure surfaced by the library.
#[derive(Debug, Error)]
pub enum LsboError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("input `{0}` is not bound")]
    MissingInput(String),

    #[error("forward pass has not been run")]
    ForwardNotRun,

    #[error("loss node is not scalar (shape {0:?})")]
    NotScalar(Vec<usize>),

    #[error("cholesky factorization failed even with jitter {jitter:e}")]
    Cholesky { jitter: f64 },

    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Divergence {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("black-box evaluation failed: {0}")]
    BlackBox(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl LsboError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        LsboError::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LsboError::Io {
            path: path.into(),
            source,
        }
    }
}
