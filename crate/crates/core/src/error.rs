use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("polar radius must be strictly positive, got {0}")]
    NonPositiveRadius(f64),

    #[error("time {t} outside plan horizon [0, {t_f}]")]
    OutsideHorizon { t: f64, t_f: f64 },

    #[error("no path from start to goal")]
    NoPath,

    #[error("scenario generation gave up after {0} rejections")]
    TooManyRejections(usize),

    #[error("ragged metrics grid: {0}")]
    RaggedGrid(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
