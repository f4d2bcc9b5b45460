//! Audio-visual class-incremental learning with closed-form classifiers.
//!
//! The pipeline fuses audio and visual features through cross-modal attention,
//! lifts them with fixed random expansions, and fits ridge classifiers
//! analytically. A prototype bank replays compressed class memory into each
//! incremental re-solve so earlier species survive later stages without
//! storing raw exemplars. Baselines, metrics, and a synthetic stream generator
//! round out the toolkit.

pub mod baselines;
pub mod error;
pub mod seeding;
pub mod expand;
pub mod fusion;
pub mod inference;
pub mod learner;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod prototype;
pub mod synth;

pub use error::{CoreError, Result};
