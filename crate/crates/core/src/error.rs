use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("taxonomy: invalid `{field}`: {message}")]
    Taxonomy { field: String, message: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid interval [{start}, {end})")]
    Interval { start: usize, end: usize },

    #[error("instance too large for exhaustive matching: {preds} predictions, {gts} ground truths (max {max})")]
    InstanceTooLarge { preds: usize, gts: usize, max: usize },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn taxonomy(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Taxonomy {
            field: field.into(),
            message: message.into(),
        }
    }
}
