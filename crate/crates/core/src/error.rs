use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the selection library.
#[derive(Debug, Error)]
pub enum DashError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("every dataset in the pool is exhausted")]
    ExhaustedPool,

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown scenario tag `{0}`")]
    UnknownScenario(String),

    #[error("{context}: {path}: {source}")]
    Io {
        context: String,
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

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl DashError {
    pub(crate) fn io(
        context: impl Into<String>,
        path: impl Into<PathBuf>,
        source: std::io::Error,
    ) -> Self {
        DashError::Io {
            context: context.into(),
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = DashError> = std::result::Result<T, E>;
