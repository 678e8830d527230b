use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, NorError>;

#[derive(Debug, Error)]
pub enum NorError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("unknown {table} id `{id}`")]
    UnknownId { table: &'static str, id: String },

    #[error("token id {0} is outside the vocabulary")]
    OutOfVocabulary(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss {value} in batch {batch} of epoch {epoch}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },

    #[error("negative sampling gave up after {0} attempts")]
    SamplingExhausted(usize),

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl NorError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        NorError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NorError::Io {
            path: path.into(),
            source,
        }
    }
}
