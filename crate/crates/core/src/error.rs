use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("estimator undefined: {0}")]
    EstimatorUndefined(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("window [{start}, {end}] s lies outside the recording [0, {duration}] s")]
    WindowOutsideRecord { start: f64, end: f64, duration: f64 },

    #[error("time {time} s lies outside the recording window [0, {duration}) s")]
    TimeOutsideRecord { time: f64, duration: f64 },

    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}
