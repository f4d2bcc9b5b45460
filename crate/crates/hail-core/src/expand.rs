//! Fixed random feature expansion: a seeded projection followed by ReLU that
//! lifts features into a higher-dimensional space where the closed-form
//! classifiers operate. The weights are drawn once from the seed and never
//! trained, so a map is fully described by (dims, seed) and two maps built
//! from the same triple are bit-identical.

use crate::error::{CoreError, Result};
use crate::linalg::{relu, seeded_uniform_matrix, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionMap {
    input_dim: usize,
    output_dim: usize,
    seed: u64,
    scale: f64,
    weights: Matrix,
}

impl ExpansionMap {
    /// Serialized size of a map: dims and seed, not the derived weights.
    pub const DESCRIPTOR_BYTES: usize = 3 * std::mem::size_of::<u64>();

    /// Builds a map with Uniform(-scale, scale) weights at scale
    /// 1/sqrt(input_dim). The output dimension must not shrink the feature.
    pub fn new(input_dim: usize, output_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(CoreError::InvalidArgument("expansion input_dim must be >= 1".into()));
        }
        if output_dim < input_dim {
            return Err(CoreError::InvalidArgument(format!(
                "expansion must not reduce dimension: {input_dim} -> {output_dim}"
            )));
        }
        let scale = 1.0 / (input_dim as f64).sqrt();
        let weights = seeded_uniform_matrix(input_dim, output_dim, scale, seed);
        Ok(ExpansionMap { input_dim, output_dim, seed, scale, weights })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// ReLU(feature · W). Entries of the result are non-negative and finite.
    pub fn expand(&self, feature: &[f64]) -> Result<Vec<f64>> {
        if feature.len() != self.input_dim {
            return Err(CoreError::DimensionMismatch(format!(
                "expansion input length {} vs expected {}",
                feature.len(),
                self.input_dim
            )));
        }
        if !feature.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite("expansion input".into()));
        }
        Ok(self.weights.vec_mul(feature)?.into_iter().map(relu).collect())
    }

    /// Expands each row of a batch into an n x output_dim matrix.
    pub fn expand_batch(&self, rows: &[Vec<f64>]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(rows.len() * self.output_dim);
        for row in rows {
            data.extend(self.expand(row)?);
        }
        Matrix::from_vec(rows.len(), self.output_dim, data)
    }
}
