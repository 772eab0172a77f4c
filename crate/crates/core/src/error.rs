use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("structural error: {0}")]
    Structure(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("incompatible checkpoint: {0}")]
    Compatibility(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
