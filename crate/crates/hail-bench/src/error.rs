//! Harness-level error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("core: {0}")]
    Core(#[from] hail_core::CoreError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("bad results file: {0}")]
    BadResults(String),
}
