use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("could not place {requested} vehicles collision-free in the {task} scenario")]
    Placement { task: String, requested: usize },

    /// Treatment and control arms differ in something besides the treatment flag.
    #[error("arm comparability check failed: {0}")]
    Comparability(String),

    #[error("malformed trace at line {line}: {message}")]
    Trace { line: usize, message: String },

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Usage or configuration problems, as opposed to failures while running.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Trace { .. } | Error::Json(_)
        )
    }
}
