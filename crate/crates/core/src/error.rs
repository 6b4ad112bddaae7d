//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("site ({0}, {1}) is not occupied")]
    UnknownSite(i32, i32),

    #[error("cluster target size {requested} exceeds the addressable site budget {budget}")]
    CapacityExceeded { requested: u64, budget: u64 },

    #[error("sample of {requested} exceeds available population {available}")]
    SampleExceedsPopulation { requested: usize, available: usize },

    #[error("insufficient cluster radius: start site ({0}, {1}) not occupied after growth")]
    InsufficientRadius(i32, i32),

    #[error("insufficient points for log-log fit: {0} positive entries after dropping zeros")]
    InsufficientPoints(usize),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("snapshot format error: {0}")]
    SnapshotFormat(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
