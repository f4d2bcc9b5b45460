//! Experiment harness around `hail-core`: configuration, the per-seed
//! stage loop over every configured learner, result/report emission, and
//! checkpoint persistence.

pub mod checkpoint;
pub mod config;
pub mod report;
pub mod runner;

mod error;

pub use error::BenchError;

pub type Result<T> = std::result::Result<T, BenchError>;
