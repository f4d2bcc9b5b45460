//! Prototype memory. General prototypes summarize each intensity class in the
//! expanded fused space and are blended forward with an exponential moving
//! average as new species arrive. Species prototypes summarize each (species,
//! intensity) cell per modality, are built once, and stay frozen; routing
//! matches queries against them.

use std::collections::BTreeMap;

use crate::error::{CoreError, Result};
use crate::fusion::Intensity;
use crate::linalg::{cosine_similarity, kmeans, Matrix};
use crate::seeding::derive_seed;

/// Per-(species, intensity) modality signatures.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesPrototypes {
    pub audio: Vec<Vec<f64>>,
    pub visual: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    m: usize,
    alpha: f64,
    general: BTreeMap<Intensity, Vec<Vec<f64>>>,
    species: BTreeMap<(u64, Intensity), SpeciesPrototypes>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Rows of `features` whose label matches `intensity`, as a matrix.
fn class_rows(features: &Matrix, labels: &[Intensity], intensity: Intensity) -> Option<Matrix> {
    let rows: Vec<Vec<f64>> = labels
        .iter()
        .enumerate()
        .filter(|(_, l)| **l == intensity)
        .map(|(i, _)| features.row(i).to_vec())
        .collect();
    if rows.is_empty() {
        None
    } else {
        Some(Matrix::from_rows(&rows).expect("rows share the feature width"))
    }
}

/// Clusters one class into min(m, n) centroids and pads to exactly m by
/// repeating centroids round-robin in index order.
fn class_prototypes(rows: &Matrix, m: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let k = m.min(rows.rows());
    let result = kmeans(rows, k, 100, seed)?;
    let mut protos: Vec<Vec<f64>> =
        (0..k).map(|c| result.centroids.row(c).to_vec()).collect();
    let mut idx = 0;
    while protos.len() < m {
        protos.push(protos[idx].clone());
        idx = (idx + 1) % k;
    }
    Ok(protos)
}

impl PrototypeBank {
    /// `m` prototypes per intensity; `alpha` is the EMA retention weight.
    pub fn new(m: usize, alpha: f64) -> Result<Self> {
        if m == 0 {
            return Err(CoreError::InvalidArgument("prototype count m must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&alpha) || !alpha.is_finite() {
            return Err(CoreError::InvalidArgument(format!(
                "ema alpha must lie in [0, 1], got {alpha}"
            )));
        }
        Ok(PrototypeBank { m, alpha, general: BTreeMap::new(), species: BTreeMap::new() })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn has_general(&self) -> bool {
        !self.general.is_empty()
    }

    pub fn general(&self) -> &BTreeMap<Intensity, Vec<Vec<f64>>> {
        &self.general
    }

    pub fn species(&self) -> &BTreeMap<(u64, Intensity), SpeciesPrototypes> {
        &self.species
    }

    pub fn species_ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.species.keys().map(|(s, _)| *s).collect();
        ids.dedup();
        ids
    }

    /// Restores a bank from serialized parts; used by checkpoint loading.
    pub fn from_parts(
        m: usize,
        alpha: f64,
        general: BTreeMap<Intensity, Vec<Vec<f64>>>,
        species: BTreeMap<(u64, Intensity), SpeciesPrototypes>,
    ) -> Result<Self> {
        let mut bank = PrototypeBank::new(m, alpha)?;
        bank.general = general;
        bank.species = species;
        Ok(bank)
    }

    /// Builds the general prototypes from scratch by clustering each
    /// intensity's rows. Returns the intensities that had no samples and were
    /// therefore omitted.
    pub fn build_general(
        &mut self,
        features: &Matrix,
        labels: &[Intensity],
        seed: u64,
    ) -> Result<Vec<Intensity>> {
        if features.rows() != labels.len() {
            return Err(CoreError::DimensionMismatch(format!(
                "{} feature rows vs {} labels",
                features.rows(),
                labels.len()
            )));
        }
        self.general.clear();
        let mut skipped = Vec::new();
        for intensity in Intensity::ALL {
            match class_rows(features, labels, intensity) {
                Some(rows) => {
                    let protos =
                        class_prototypes(&rows, self.m, derive_seed(seed, intensity.index() as u64))?;
                    self.general.insert(intensity, protos);
                }
                None => skipped.push(intensity),
            }
        }
        Ok(skipped)
    }

    /// Blends new per-intensity cluster means into the stored prototypes:
    /// each new centroid pairs greedily (ascending distance) with an unused
    /// old prototype of the same intensity, which becomes
    /// alpha * old + (1 - alpha) * new. Unmatched prototypes are untouched.
    /// An intensity absent from the bank is built fresh from the new rows.
    /// Returns the intensities that received no new samples.
    pub fn ema_update(
        &mut self,
        features: &Matrix,
        labels: &[Intensity],
        seed: u64,
    ) -> Result<Vec<Intensity>> {
        if features.rows() != labels.len() {
            return Err(CoreError::DimensionMismatch(format!(
                "{} feature rows vs {} labels",
                features.rows(),
                labels.len()
            )));
        }
        let mut untouched = Vec::new();
        for intensity in Intensity::ALL {
            let rows = match class_rows(features, labels, intensity) {
                Some(r) => r,
                None => {
                    untouched.push(intensity);
                    continue;
                }
            };
            let child_seed = derive_seed(seed, 16 + intensity.index() as u64);
            let new_protos = class_prototypes(&rows, self.m.min(rows.rows()), child_seed)?;

            match self.general.get_mut(&intensity) {
                None => {
                    let padded = class_prototypes(&rows, self.m, child_seed)?;
                    self.general.insert(intensity, padded);
                }
                Some(old) => {
                    if self.alpha == 1.0 {
                        continue;
                    }
                    // Greedy bipartite matching by ascending distance; ties
                    // break on (new index, old index) for determinism.
                    let mut pairs = Vec::new();
                    for (ni, n) in new_protos.iter().enumerate() {
                        for (oi, o) in old.iter().enumerate() {
                            pairs.push((dist2(n, o), ni, oi));
                        }
                    }
                    pairs.sort_by(|a, b| {
                        a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
                    });
                    let mut new_used = vec![false; new_protos.len()];
                    let mut old_used = vec![false; old.len()];
                    for (_, ni, oi) in pairs {
                        if new_used[ni] || old_used[oi] {
                            continue;
                        }
                        new_used[ni] = true;
                        old_used[oi] = true;
                        if self.alpha == 0.0 {
                            old[oi] = new_protos[ni].clone();
                        } else {
                            for (p, n) in old[oi].iter_mut().zip(&new_protos[ni]) {
                                *p = self.alpha * *p + (1.0 - self.alpha) * *n;
                            }
                        }
                    }
                }
            }
        }
        Ok(untouched)
    }

    /// Clusters one species' audio and visual features independently per
    /// intensity and stores the centroids. Species prototypes are built once
    /// and never blended afterwards; rebuilding the same species replaces its
    /// entries wholesale.
    pub fn build_species(
        &mut self,
        species: u64,
        audio: &Matrix,
        visual: &Matrix,
        labels: &[Intensity],
        seed: u64,
    ) -> Result<Vec<Intensity>> {
        if audio.rows() != labels.len() || visual.rows() != labels.len() {
            return Err(CoreError::DimensionMismatch(
                "species prototype features vs labels".into(),
            ));
        }
        let mut skipped = Vec::new();
        for intensity in Intensity::ALL {
            let a_rows = class_rows(audio, labels, intensity);
            let v_rows = class_rows(visual, labels, intensity);
            match (a_rows, v_rows) {
                (Some(a), Some(v)) => {
                    let tag = 32 + intensity.index() as u64;
                    let audio_p = class_prototypes(&a, self.m, derive_seed(seed, tag))?;
                    let visual_p = class_prototypes(&v, self.m, derive_seed(seed, tag + 16))?;
                    self.species
                        .insert((species, intensity), SpeciesPrototypes { audio: audio_p, visual: visual_p });
                }
                _ => skipped.push(intensity),
            }
        }
        Ok(skipped)
    }

    /// Mean cosine similarity between a query and every general prototype.
    /// A zero-norm operand contributes 0 to the mean. Errors when the bank
    /// holds no general prototypes at all.
    pub fn similarity_to_general(&self, query: &[f64]) -> Result<f64> {
        if self.general.is_empty() {
            return Err(CoreError::NoPrototypes);
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for protos in self.general.values() {
            for p in protos {
                let sim = match cosine_similarity(query, p) {
                    Ok(c) => c,
                    Err(CoreError::ZeroNorm(_)) => 0.0,
                    Err(e) => return Err(e),
                };
                total += sim;
                count += 1;
            }
        }
        Ok(total / count as f64)
    }

    /// Bytes of retained prototype state.
    pub fn byte_len(&self) -> usize {
        let f = std::mem::size_of::<f64>();
        let general: usize =
            self.general.values().map(|ps| ps.iter().map(|p| p.len() * f).sum::<usize>()).sum();
        let species: usize = self
            .species
            .values()
            .map(|sp| {
                sp.audio.iter().map(|p| p.len() * f).sum::<usize>()
                    + sp.visual.iter().map(|p| p.len() * f).sum::<usize>()
            })
            .sum();
        general + species
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_block(n: usize, v: Vec<f64>) -> (Matrix, Vec<Intensity>) {
        let rows = vec![v; n];
        (Matrix::from_rows(&rows).unwrap(), vec![Intensity::Weak; n])
    }

    #[test]
    fn identical_samples_collapse_every_prototype() {
        let (feats, labels) = constant_block(12, vec![1.0, 2.0, 3.0]);
        let mut bank = PrototypeBank::new(5, 0.7).unwrap();
        let skipped = bank.build_general(&feats, &labels, 7).unwrap();
        assert_eq!(skipped.len(), 3);
        let protos = &bank.general()[&Intensity::Weak];
        assert_eq!(protos.len(), 5);
        for p in protos {
            assert_eq!(p, &vec![1.0, 2.0, 3.0]);
        }
    }

    #[test]
    fn fewer_samples_than_m_pads_by_duplication() {
        let feats = Matrix::from_rows(&[vec![0.0, 0.0], vec![10.0, 10.0]]).unwrap();
        let labels = vec![Intensity::Strong; 2];
        let mut bank = PrototypeBank::new(5, 0.7).unwrap();
        bank.build_general(&feats, &labels, 3).unwrap();
        let protos = &bank.general()[&Intensity::Strong];
        assert_eq!(protos.len(), 5);
        // Only the two distinct sample points can appear.
        for p in protos {
            assert!(p == &vec![0.0, 0.0] || p == &vec![10.0, 10.0]);
        }
        let zeros = protos.iter().filter(|p| *p == &vec![0.0, 0.0]).count();
        assert!(zeros >= 2 && zeros <= 3);
    }

    #[test]
    fn ema_alpha_one_keeps_bank_bit_identical() {
        let (feats, labels) = constant_block(6, vec![1.0, -1.0]);
        let mut bank = PrototypeBank::new(2, 1.0).unwrap();
        bank.build_general(&feats, &labels, 1).unwrap();
        let before = bank.clone();
        let (new_feats, new_labels) = constant_block(6, vec![50.0, 50.0]);
        bank.ema_update(&new_feats, &new_labels, 2).unwrap();
        assert_eq!(bank, before);
    }

    #[test]
    fn ema_alpha_zero_replaces_with_new_means() {
        let (feats, labels) = constant_block(6, vec![1.0, -1.0]);
        let mut bank = PrototypeBank::new(2, 0.0).unwrap();
        bank.build_general(&feats, &labels, 1).unwrap();
        let (new_feats, new_labels) = constant_block(6, vec![50.0, 50.0]);
        bank.ema_update(&new_feats, &new_labels, 2).unwrap();
        for p in &bank.general()[&Intensity::Weak] {
            assert_eq!(p, &vec![50.0, 50.0]);
        }
    }

    #[test]
    fn ema_blend_reference_value() {
        // Old prototype [1, 0], new cluster mean [0, 1], alpha 0.7:
        // the blend is exactly [0.7, 1 - 0.7] in float arithmetic.
        let (feats, labels) = constant_block(3, vec![1.0, 0.0]);
        let mut bank = PrototypeBank::new(1, 0.7).unwrap();
        bank.build_general(&feats, &labels, 1).unwrap();
        let (new_feats, new_labels) = constant_block(3, vec![0.0, 1.0]);
        bank.ema_update(&new_feats, &new_labels, 2).unwrap();
        let p = &bank.general()[&Intensity::Weak][0];
        assert_eq!(p[0], 0.7);
        assert_eq!(p[1], 1.0 - 0.7);
    }

    #[test]
    fn ema_is_idempotent_on_matching_means() {
        let (feats, labels) = constant_block(4, vec![2.0, 3.0]);
        let mut bank = PrototypeBank::new(1, 0.5).unwrap();
        bank.build_general(&feats, &labels, 1).unwrap();
        let before = bank.clone();
        bank.ema_update(&feats, &labels, 9).unwrap();
        assert_eq!(bank, before);
    }

    #[test]
    fn greedy_matching_pairs_nearest_clusters() {
        // Two well-separated prototypes; the shifted versions must blend with
        // their own counterpart, not cross over.
        let feats = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![100.0, 100.0],
            vec![100.0, 100.0],
        ])
        .unwrap();
        let labels = vec![Intensity::Medium; 4];
        let mut bank = PrototypeBank::new(2, 0.5).unwrap();
        bank.build_general(&feats, &labels, 4).unwrap();

        let new_feats = Matrix::from_rows(&[
            vec![2.0, 2.0],
            vec![2.0, 2.0],
            vec![102.0, 102.0],
            vec![102.0, 102.0],
        ])
        .unwrap();
        bank.ema_update(&new_feats, &labels, 5).unwrap();
        let mut protos = bank.general()[&Intensity::Medium].clone();
        protos.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert_eq!(protos[0], vec![1.0, 1.0]);
        assert_eq!(protos[1], vec![101.0, 101.0]);
    }

    #[test]
    fn species_prototypes_are_per_modality_and_frozen_shape() {
        let audio = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let visual = Matrix::from_rows(&[vec![5.0, 5.0], vec![5.0, 5.0], vec![6.0, 6.0]]).unwrap();
        let labels = vec![Intensity::None, Intensity::None, Intensity::Weak];
        let mut bank = PrototypeBank::new(2, 0.7).unwrap();
        let skipped = bank.build_species(3, &audio, &visual, &labels, 11).unwrap();
        assert_eq!(skipped, vec![Intensity::Medium, Intensity::Strong]);
        let cell = &bank.species()[&(3, Intensity::None)];
        assert_eq!(cell.audio.len(), 2);
        assert_eq!(cell.visual.len(), 2);
        assert_eq!(cell.audio[0], vec![1.0, 0.0]);
        assert_eq!(cell.visual[0], vec![5.0, 5.0]);
    }

    #[test]
    fn similarity_is_bounded_and_needs_prototypes() {
        let bank = PrototypeBank::new(2, 0.7).unwrap();
        assert!(matches!(bank.similarity_to_general(&[1.0, 0.0]), Err(CoreError::NoPrototypes)));

        let (feats, labels) = constant_block(4, vec![1.0, 1.0]);
        let mut bank = PrototypeBank::new(2, 0.7).unwrap();
        bank.build_general(&feats, &labels, 2).unwrap();
        let sim = bank.similarity_to_general(&[1.0, 1.0]).unwrap();
        assert!((sim - 1.0).abs() < 1e-12);
        let sim_orth = bank.similarity_to_general(&[1.0, -1.0]).unwrap();
        assert!(sim_orth.abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&sim));
    }

    #[test]
    fn same_seed_builds_identical_banks() {
        let mut data = Vec::new();
        let mut state = 77_u64;
        for _ in 0..80 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            data.push((state >> 11) as f64 / (1u64 << 53) as f64);
        }
        let feats = Matrix::from_vec(20, 4, data).unwrap();
        let labels: Vec<Intensity> =
            (0..20).map(|i| Intensity::from_index(i % 4).unwrap()).collect();
        let mut a = PrototypeBank::new(3, 0.7).unwrap();
        let mut b = PrototypeBank::new(3, 0.7).unwrap();
        a.build_general(&feats, &labels, 42).unwrap();
        b.build_general(&feats, &labels, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(PrototypeBank::new(0, 0.7).is_err());
        assert!(PrototypeBank::new(5, -0.1).is_err());
        assert!(PrototypeBank::new(5, 1.5).is_err());
    }
}
