use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Polar angle is undefined at the star center.
    #[error("point ({x}, {y}) coincides with the domain center; the polar angle is undefined")]
    AtCenter { x: f64, y: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("non-finite value at collocation point {point} in parameter group {group}")]
    NonFinite { point: usize, group: &'static str },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("solver did not converge: {0}")]
    Convergence(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
