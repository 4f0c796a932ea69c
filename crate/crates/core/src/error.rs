use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("capacity exceeded: {requested} > {capacity}")]
    Capacity { requested: usize, capacity: usize },
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("array is in {actual} mode, operation requires {required} mode")]
    WrongMode {
        required: &'static str,
        actual: &'static str,
    },
    #[error("no search-enabled pairs in CAM array")]
    NoEnabledPairs,
    #[error("no CAM entry matches value {0}")]
    NoMatch(u32),
    #[error("misaligned distance batch: {batch} distances for {pairs} pairs")]
    MisalignedBatch { batch: usize, pairs: usize },
    #[error("stale distance batch: computed for reference {batch}, requested centroid {centroid}")]
    StaleBatch { batch: usize, centroid: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("mismatched energy parameters in merged reports")]
    MismatchedParams,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
