//! Crate-wide error type.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("workload error: {0}")]
    Workload(String),

    #[error("query count overflow: {0}")]
    CountOverflow(String),

    #[error("query index {index} out of range for query count {count}")]
    QueryIndexOutOfRange { index: u64, count: u64 },

    #[error("privacy parameter error: {0}")]
    Privacy(String),

    #[error("projection error: {0}")]
    Projection(String),

    #[error("optimization diverged: {0}")]
    Diverged(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;
