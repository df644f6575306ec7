use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("non-finite parameters after sampler step {step}")]
    NonFiniteSample { step: u64 },

    #[error("chain {chain} failed: {source}")]
    Chain {
        chain: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("unsupported ensemble file version {0}")]
    UnsupportedVersion(u16),

    #[error("format error: {0}")]
    Format(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by invalid user input rather than a failure during compute.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Usage(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
