//! The incremental classifier: a general intensity head over expanded fused
//! features plus per-species modality heads, all fitted in closed form by
//! ridge regression. Later stages refit the general head on the current
//! stage's features stacked with similarity-weighted prototype rows, which is
//! what preserves earlier species without storing their data.

use std::collections::BTreeMap;

use crate::error::{CoreError, Result};
use crate::expand::ExpansionMap;
use crate::fusion::Intensity;
use crate::inference::{GammaSchedule, ModalityBalancer};
use crate::linalg::{ridge_solve, Matrix, RidgeConfig};
use crate::prototype::PrototypeBank;
use crate::seeding::derive_seed;

/// Floor applied to the prototype weight lambda_p.
pub const LAMBDA_P_FLOOR: f64 = 0.2;

/// One-hot encodes intensity labels in the fixed order
/// None=0, Weak=1, Medium=2, Strong=3.
pub fn one_hot(labels: &[Intensity]) -> Matrix {
    let mut y = Matrix::zeros(labels.len(), Intensity::COUNT);
    for (r, l) in labels.iter().enumerate() {
        y.set(r, l.index(), 1.0);
    }
    y
}

/// Per-species closed-form modality heads.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesHeads {
    pub w_audio: Matrix,
    pub w_visual: Matrix,
}

/// Training batch augmented with prototype rows.
#[derive(Debug, Clone)]
pub struct AugmentedBatch {
    pub features: Matrix,
    pub labels: Matrix,
    pub lambda_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HailModel {
    pub expansion_av: ExpansionMap,
    pub expansion_a: ExpansionMap,
    pub expansion_v: ExpansionMap,
    pub w_av: Option<Matrix>,
    pub species_heads: BTreeMap<u64, SpeciesHeads>,
    /// Species ids in the order they were learned.
    pub species_order: Vec<u64>,
    pub gamma: GammaSchedule,
    pub balancer: ModalityBalancer,
    pub ridge: RidgeConfig,
}

impl HailModel {
    /// Creates expansion maps for the fused path (ratio `expansion_ratio`)
    /// and both modality paths (ratio `modality_ratio`), all derived from
    /// one seed.
    pub fn new(
        d: usize,
        expansion_ratio: usize,
        modality_ratio: usize,
        gamma: GammaSchedule,
        ridge: RidgeConfig,
        seed: u64,
    ) -> Result<Self> {
        if expansion_ratio == 0 || modality_ratio == 0 {
            return Err(CoreError::InvalidArgument("expansion ratios must be >= 1".into()));
        }
        Ok(HailModel {
            expansion_av: ExpansionMap::new(d, d * expansion_ratio, derive_seed(seed, 0))?,
            expansion_a: ExpansionMap::new(d, d * modality_ratio, derive_seed(seed, 1))?,
            expansion_v: ExpansionMap::new(d, d * modality_ratio, derive_seed(seed, 2))?,
            w_av: None,
            species_heads: BTreeMap::new(),
            species_order: Vec::new(),
            gamma,
            balancer: ModalityBalancer::new(),
            ridge,
        })
    }

    /// Fits the general intensity head on expanded fused features.
    pub fn fit_general(&mut self, f_av: &Matrix, y: &Matrix) -> Result<()> {
        self.w_av = Some(ridge_solve(f_av, y, self.ridge)?);
        Ok(())
    }

    /// Fits a species' audio and visual heads independently.
    pub fn fit_species(
        &mut self,
        species: u64,
        f_a: &Matrix,
        f_v: &Matrix,
        y: &Matrix,
    ) -> Result<()> {
        let w_audio = ridge_solve(f_a, y, self.ridge)?;
        let w_visual = ridge_solve(f_v, y, self.ridge)?;
        if !self.species_order.contains(&species) {
            self.species_order.push(species);
        }
        self.species_heads.insert(species, SpeciesHeads { w_audio, w_visual });
        Ok(())
    }

    /// Stacks the stage batch with prototype rows scaled by
    /// lambda_p = max(0.2, mean cosine between the batch's mean feature and
    /// the general prototypes). Prototype labels are exact one-hots. An empty
    /// bank returns the batch unchanged with lambda_p = 1.
    pub fn build_augmented(
        &self,
        f_k: &Matrix,
        y_k: &Matrix,
        bank: &PrototypeBank,
    ) -> Result<AugmentedBatch> {
        if f_k.rows() != y_k.rows() {
            return Err(CoreError::DimensionMismatch(format!(
                "{} feature rows vs {} label rows",
                f_k.rows(),
                y_k.rows()
            )));
        }
        if !bank.has_general() {
            return Ok(AugmentedBatch { features: f_k.clone(), labels: y_k.clone(), lambda_p: 1.0 });
        }

        let d_up = f_k.cols();
        let mut mu = vec![0.0; d_up];
        for r in 0..f_k.rows() {
            for (m, x) in mu.iter_mut().zip(f_k.row(r)) {
                *m += x;
            }
        }
        let n = f_k.rows() as f64;
        for m in mu.iter_mut() {
            *m /= n;
        }
        let lambda_p = bank.similarity_to_general(&mu)?.max(LAMBDA_P_FLOOR);

        let mut rows: Vec<Vec<f64>> = (0..f_k.rows()).map(|r| f_k.row(r).to_vec()).collect();
        let mut labels: Vec<Vec<f64>> = (0..y_k.rows()).map(|r| y_k.row(r).to_vec()).collect();
        for (intensity, protos) in bank.general() {
            for p in protos {
                if p.len() != d_up {
                    return Err(CoreError::DimensionMismatch(format!(
                        "prototype dim {} vs feature dim {}",
                        p.len(),
                        d_up
                    )));
                }
                rows.push(p.iter().map(|x| lambda_p * x).collect());
                let mut oh = vec![0.0; Intensity::COUNT];
                oh[intensity.index()] = 1.0;
                labels.push(oh);
            }
        }
        Ok(AugmentedBatch {
            features: Matrix::from_rows(&rows)?,
            labels: Matrix::from_rows(&labels)?,
            lambda_p,
        })
    }

    /// Replaces the general head with a ridge solve over the augmented batch.
    pub fn incremental_update(
        &mut self,
        f_k: &Matrix,
        y_k: &Matrix,
        bank: &PrototypeBank,
    ) -> Result<f64> {
        let aug = self.build_augmented(f_k, y_k, bank)?;
        self.w_av = Some(ridge_solve(&aug.features, &aug.labels, self.ridge)?);
        Ok(aug.lambda_p)
    }

    /// Bytes of state the model retains between stages. Expansion maps count
    /// as their seeded descriptors, not their materialized weights.
    pub fn byte_len(&self) -> usize {
        let f = std::mem::size_of::<f64>();
        let head = self.w_av.as_ref().map_or(0, Matrix::byte_len);
        let species: usize = self
            .species_heads
            .values()
            .map(|h| h.w_audio.byte_len() + h.w_visual.byte_len())
            .sum();
        let descriptors = 3 * ExpansionMap::DESCRIPTOR_BYTES;
        head + species + descriptors + self.balancer.byte_len() + 4 * f
    }
}
