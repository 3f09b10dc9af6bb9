use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numeric domain violation: {0}")]
    NumericDomain(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("length error: expected {expected} bytes of payload, found {found}")]
    Length { expected: usize, found: usize },

    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("poisoned update: non-finite gradient in parameter {param}")]
    PoisonedUpdate { param: usize },

    #[error("unbounded weight: {0}")]
    UnboundedWeight(String),

    #[error("non-finite {loss} loss at iteration {iteration} (seed {seed})")]
    NonFiniteLoss {
        loss: &'static str,
        iteration: usize,
        seed: u64,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
