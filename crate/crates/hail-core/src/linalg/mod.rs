//! Dense numeric kernels: a small row-major matrix type, a Cholesky-based
//! ridge solver, seeded k-means, and scalar helpers. Everything is f64 and
//! deterministic given its inputs; all randomness enters through explicit
//! 64-bit seeds.

mod kmeans;
mod matrix;
mod ops;
mod ridge;

pub use kmeans::{kmeans, KMeansResult};
pub use matrix::{seeded_uniform_matrix, Matrix};
pub use ops::{cosine_similarity, relu, sigmoid, stable_softmax};
pub use ridge::{ridge_solve, solve_spd, RidgeConfig};
