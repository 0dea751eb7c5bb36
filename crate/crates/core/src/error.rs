use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates its documented domain.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// A payload or level target cannot be reached by the model.
    #[error("infeasible target: {0}")]
    Infeasible(String),

    /// The score range collapsed to a single value.
    #[error("degenerate score range: all {count} scores equal {value}")]
    DegenerateRange { count: usize, value: f64 },

    #[error("training failed: {0}")]
    Training(String),

    /// Two artifacts that must agree (models, configs, features) do not.
    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error("{path}:{line}: {message}")]
    Ingest {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }

    pub(crate) fn infeasible(msg: impl Into<String>) -> Self {
        Error::Infeasible(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
