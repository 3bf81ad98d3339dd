use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the pipeline library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("missing mandatory column `{0}`")]
    MissingColumn(String),

    #[error("unsupported dataset format for {0} (expected .csv, .tsv or .jsonl)")]
    UnsupportedFormat(PathBuf),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no labeled records")]
    NoLabeledRecords,

    #[error("empty sample")]
    EmptySample,

    #[error("boundary group `{0}` is empty")]
    EmptyBoundaryGroup(String),

    #[error("no overlapping features between record and statistics")]
    NoOverlappingFeatures,

    #[error("class statistics missing for level {0}")]
    MissingClassStats(u8),

    #[error("scope has no entries at level {0}")]
    EmptyLevel(u8),

    #[error("too many neighbors: {0} (at most 3)")]
    TooManyNeighbors(usize),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("cost index must be positive, got {0}")]
    NonPositiveCost(f64),

    #[error("pricing mode is not set")]
    PricingUnset,

    #[error("backend error: {0}")]
    Backend(#[from] crate::gateway::BackendError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
