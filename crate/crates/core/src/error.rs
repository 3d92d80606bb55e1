use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Ingest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("feature schema mismatch: {0}")]
    Schema(String),

    #[error("graph build error: {0}")]
    GraphBuild(String),

    #[error("split construction error: {0}")]
    Split(String),

    #[error("non-finite value in {component}: {detail}")]
    Numeric { component: String, detail: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch} (loss {loss}); last good checkpoint kept")]
    Divergence { epoch: usize, loss: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn numeric(component: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            component: component.into(),
            detail: detail.into(),
        }
    }
}
