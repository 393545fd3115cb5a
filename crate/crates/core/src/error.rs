use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} (expected {expected}, got {actual})")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no tasks configured")]
    NoTasks,

    #[error("a query batch is still pending ({0} unlabeled pairs)")]
    BatchPending(usize),

    #[error("no pending pair with id {0}")]
    UnknownPair(String),

    #[error("pair {0} is already labeled")]
    AlreadyLabeled(String),

    #[error("training diverged: {0}")]
    Training(String),

    #[error("replay mismatch: {0}")]
    Replay(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(what: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            what,
            expected,
            actual,
        }
    }

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

pub(crate) fn ensure_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
