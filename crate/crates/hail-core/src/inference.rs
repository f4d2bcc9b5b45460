//! Hierarchical prediction: blends the general head with species-specific
//! modality heads. A stage-indexed schedule shifts weight from the general
//! head toward species heads as more species are learned, per-class sigmoid
//! weights trade audio against visual logits, and test-time species identity
//! comes either from prototype routing or from an oracle hint.

use crate::error::{CoreError, Result};
use crate::fusion::{fuse_forward, FeaturePair, FusionParams, Intensity};
use crate::linalg::{cosine_similarity, sigmoid, stable_softmax, Matrix};
use crate::model::HailModel;
use crate::prototype::PrototypeBank;
use std::collections::BTreeMap;

/// Stage-dependent weight on the general head:
/// gamma_k = gamma_max - (gamma_max - gamma_min) * k / K, with the endpoints
/// returned exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaSchedule {
    gamma_max: f64,
    gamma_min: f64,
    k_total: usize,
}

impl GammaSchedule {
    pub fn new(gamma_max: f64, gamma_min: f64, k_total: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma_min)
            || !(0.0..=1.0).contains(&gamma_max)
            || gamma_min > gamma_max
        {
            return Err(CoreError::InvalidArgument(format!(
                "need 0 <= gamma_min <= gamma_max <= 1, got ({gamma_max}, {gamma_min})"
            )));
        }
        if k_total == 0 {
            return Err(CoreError::InvalidArgument("schedule needs K >= 1".into()));
        }
        Ok(GammaSchedule { gamma_max, gamma_min, k_total })
    }

    pub fn gamma_max(&self) -> f64 {
        self.gamma_max
    }

    pub fn gamma_min(&self) -> f64 {
        self.gamma_min
    }

    pub fn k_total(&self) -> usize {
        self.k_total
    }

    /// Gamma at stage k (0-based). Monotone non-increasing in k.
    pub fn gamma_at(&self, k: usize) -> Result<f64> {
        if k > self.k_total {
            return Err(CoreError::InvalidArgument(format!(
                "stage {k} beyond schedule length {}",
                self.k_total
            )));
        }
        if k == 0 {
            return Ok(self.gamma_max);
        }
        if k == self.k_total {
            return Ok(self.gamma_min);
        }
        let t = k as f64 / self.k_total as f64;
        Ok(self.gamma_max - (self.gamma_max - self.gamma_min) * t)
    }
}

/// How test-time species identity is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoutingMode {
    /// Nearest species prototype (default).
    Prototype,
    /// Caller supplies the true species id.
    Oracle,
}

/// Per-(species, class) sigmoid gates over concatenated modality features.
/// Species without trained weights fall back to an even 0.5/0.5 split.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModalityBalancer {
    w: BTreeMap<u64, Matrix>,
}

pub const DEFAULT_BETA: f64 = 0.5;

impl ModalityBalancer {
    pub fn new() -> Self {
        ModalityBalancer { w: BTreeMap::new() }
    }

    pub fn weights(&self) -> &BTreeMap<u64, Matrix> {
        &self.w
    }

    /// Installs a species' gate matrix (one row per intensity class).
    pub fn set_weights(&mut self, species: u64, w: Matrix) -> Result<()> {
        if w.rows() != Intensity::COUNT {
            return Err(CoreError::DimensionMismatch(format!(
                "balancer needs {} rows, got {}",
                Intensity::COUNT,
                w.rows()
            )));
        }
        self.w.insert(species, w);
        Ok(())
    }

    /// Audio and visual class weights for one sample. beta_a[i] is the
    /// sigmoid of the species' i-th gate row dotted with [f_a ; f_v], and
    /// beta_v[i] = 1 - beta_a[i], so the pair sums to 1 exactly. With
    /// `strict` set, an untrained species is an error instead of the
    /// 0.5 fallback.
    pub fn beta_weights(
        &self,
        species: u64,
        f_a: &[f64],
        f_v: &[f64],
        strict: bool,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        match self.w.get(&species) {
            None => {
                if strict {
                    return Err(CoreError::UnknownSpecies(species));
                }
                Ok((vec![DEFAULT_BETA; Intensity::COUNT], vec![1.0 - DEFAULT_BETA; Intensity::COUNT]))
            }
            Some(w) => {
                if w.cols() != f_a.len() + f_v.len() {
                    return Err(CoreError::DimensionMismatch(format!(
                        "gate width {} vs concatenated feature length {}",
                        w.cols(),
                        f_a.len() + f_v.len()
                    )));
                }
                let mut beta_a = Vec::with_capacity(Intensity::COUNT);
                for i in 0..Intensity::COUNT {
                    let row = w.row(i);
                    let mut z = 0.0;
                    for (c, x) in f_a.iter().chain(f_v.iter()).enumerate() {
                        z += row[c] * x;
                    }
                    beta_a.push(sigmoid(z));
                }
                let beta_v = beta_a.iter().map(|b| 1.0 - b).collect();
                Ok((beta_a, beta_v))
            }
        }
    }

    pub fn byte_len(&self) -> usize {
        self.w.values().map(Matrix::byte_len).sum()
    }
}

/// The outcome of one hierarchical prediction.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub predicted_intensity: Intensity,
    pub routed_species: u64,
    pub gamma_used: f64,
    pub beta_a: Vec<f64>,
}

/// Picks the species whose prototypes are most similar to the expanded
/// modality features: per species the best audio cosine and best visual
/// cosine are averaged, and ties break toward the lowest species id.
/// Zero-norm comparisons contribute similarity 0.
pub fn route_species(f_a: &[f64], f_v: &[f64], bank: &PrototypeBank) -> Result<u64> {
    if bank.species().is_empty() {
        return Err(CoreError::NoSpeciesPrototypes);
    }
    let mut per_species: BTreeMap<u64, f64> = BTreeMap::new();
    for ((species, _), cell) in bank.species() {
        let best = |query: &[f64], protos: &[Vec<f64>]| -> f64 {
            protos
                .iter()
                .map(|p| cosine_similarity(query, p).unwrap_or(0.0))
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let score = 0.5 * (best(f_a, &cell.audio) + best(f_v, &cell.visual));
        let entry = per_species.entry(*species).or_insert(f64::NEG_INFINITY);
        if score > *entry {
            *entry = score;
        }
    }
    let mut best_id = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (species, score) in per_species {
        if score > best_score {
            best_score = score;
            best_id = species;
        }
    }
    Ok(best_id)
}

/// Runs fusion, expansion, and the blended two-level read-out for one sample.
/// `stage_k` indexes the gamma schedule (species learned so far minus one).
/// Oracle routing requires `species_hint`.
pub fn predict(
    model: &HailModel,
    bank: &PrototypeBank,
    sample: &FeaturePair,
    fusion: &FusionParams,
    stage_k: usize,
    mode: RoutingMode,
    species_hint: Option<u64>,
) -> Result<Prediction> {
    let out = fuse_forward(sample, fusion)?;
    let f_av = model.expansion_av.expand(&out.fused)?;
    let f_a = model.expansion_a.expand(&out.enhanced_audio)?;
    let f_v = model.expansion_v.expand(&out.enhanced_visual)?;
    predict_expanded(model, bank, &f_av, &f_a, &f_v, stage_k, mode, species_hint)
}

/// The read-out of `predict` on features that are already fused and expanded.
#[allow(clippy::too_many_arguments)]
pub fn predict_expanded(
    model: &HailModel,
    bank: &PrototypeBank,
    f_av: &[f64],
    f_a: &[f64],
    f_v: &[f64],
    stage_k: usize,
    mode: RoutingMode,
    species_hint: Option<u64>,
) -> Result<Prediction> {
    let w_av = model.w_av.as_ref().ok_or(CoreError::NoSpeciesLearned)?;
    let y_av = w_av.vec_mul(f_av)?;

    let species = match mode {
        RoutingMode::Oracle => species_hint.ok_or_else(|| {
            CoreError::InvalidArgument("oracle routing requires a species id".into())
        })?,
        RoutingMode::Prototype => route_species(f_a, f_v, bank)?,
    };
    let heads = model
        .species_heads
        .get(&species)
        .ok_or(CoreError::UnknownSpecies(species))?;

    let logits_a = heads.w_audio.vec_mul(f_a)?;
    let logits_v = heads.w_visual.vec_mul(f_v)?;
    let (beta_a, beta_v) = model.balancer.beta_weights(species, f_a, f_v, false)?;

    let gamma = model.gamma.gamma_at(stage_k)?;
    let mut blended = vec![0.0; Intensity::COUNT];
    for i in 0..Intensity::COUNT {
        let y_sp = beta_a[i] * logits_a[i] + beta_v[i] * logits_v[i];
        blended[i] = gamma * y_av[i] + (1.0 - gamma) * y_sp;
    }
    let probs = stable_softmax(&blended)?;
    let mut arg = 0;
    for i in 1..probs.len() {
        if probs[i] > probs[arg] {
            arg = i;
        }
    }
    Ok(Prediction {
        probs,
        predicted_intensity: Intensity::from_index(arg)?,
        routed_species: species,
        gamma_used: gamma,
        beta_a,
    })
}

/// Cross-entropy of the balanced species read-out over a batch; the training
/// objective for the gate weights.
pub fn balancer_loss(
    w: &Matrix,
    f_a: &Matrix,
    f_v: &Matrix,
    labels: &[Intensity],
    w_audio: &Matrix,
    w_visual: &Matrix,
) -> Result<f64> {
    let n = f_a.rows();
    if n == 0 {
        return Err(CoreError::InvalidArgument("empty balancer batch".into()));
    }
    if f_v.rows() != n || labels.len() != n {
        return Err(CoreError::DimensionMismatch("balancer batch rows disagree".into()));
    }
    let mut total = 0.0;
    for r in 0..n {
        let (probs, _, _, _) = balanced_probs(w, f_a.row(r), f_v.row(r), w_audio, w_visual)?;
        total += -probs[labels[r].index()].ln();
    }
    Ok(total / n as f64)
}

fn balanced_probs(
    w: &Matrix,
    fa: &[f64],
    fv: &[f64],
    w_audio: &Matrix,
    w_visual: &Matrix,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let logits_a = w_audio.vec_mul(fa)?;
    let logits_v = w_visual.vec_mul(fv)?;
    let mut beta = Vec::with_capacity(Intensity::COUNT);
    let mut y_sp = Vec::with_capacity(Intensity::COUNT);
    for i in 0..Intensity::COUNT {
        let row = w.row(i);
        let mut z = 0.0;
        for (c, x) in fa.iter().chain(fv.iter()).enumerate() {
            z += row[c] * x;
        }
        let b = sigmoid(z);
        beta.push(b);
        y_sp.push(b * logits_a[i] + (1.0 - b) * logits_v[i]);
    }
    let probs = stable_softmax(&y_sp)?;
    Ok((probs, beta, logits_a, logits_v))
}

/// Mean-batch gradient of `balancer_loss` with respect to the gate matrix.
pub fn balancer_gradient(
    w: &Matrix,
    f_a: &Matrix,
    f_v: &Matrix,
    labels: &[Intensity],
    w_audio: &Matrix,
    w_visual: &Matrix,
) -> Result<Matrix> {
    let n = f_a.rows();
    let mut grad = Matrix::zeros(w.rows(), w.cols());
    for r in 0..n {
        let fa = f_a.row(r);
        let fv = f_v.row(r);
        let (probs, beta, logits_a, logits_v) = balanced_probs(w, fa, fv, w_audio, w_visual)?;
        for i in 0..Intensity::COUNT {
            let d_ysp = probs[i] - if labels[r].index() == i { 1.0 } else { 0.0 };
            let coeff = d_ysp * (logits_a[i] - logits_v[i]) * beta[i] * (1.0 - beta[i]) / n as f64;
            if coeff == 0.0 {
                continue;
            }
            let row = grad.row_mut(i);
            for (c, x) in fa.iter().chain(fv.iter()).enumerate() {
                row[c] += coeff * x;
            }
        }
    }
    Ok(grad)
}

/// Fits one species' gate weights by full-batch gradient descent from a zero
/// start (an even modality split). Returns the per-step loss curve.
pub fn train_balancer(
    balancer: &mut ModalityBalancer,
    species: u64,
    f_a: &Matrix,
    f_v: &Matrix,
    labels: &[Intensity],
    w_audio: &Matrix,
    w_visual: &Matrix,
    steps: usize,
    lr: f64,
) -> Result<Vec<f64>> {
    if lr < 0.0 || !lr.is_finite() {
        return Err(CoreError::InvalidArgument(format!("bad learning rate {lr}")));
    }
    let mut w = Matrix::zeros(Intensity::COUNT, f_a.cols() + f_v.cols());
    let mut curve = Vec::with_capacity(steps);
    for step in 0..steps {
        let loss = balancer_loss(&w, f_a, f_v, labels, w_audio, w_visual)?;
        if !loss.is_finite() {
            return Err(CoreError::NonFiniteLoss { step });
        }
        curve.push(loss);
        if lr == 0.0 {
            continue;
        }
        let grad = balancer_gradient(&w, f_a, f_v, labels, w_audio, w_visual)?;
        w = w.sub(&grad.scale(lr))?;
    }
    balancer.set_weights(species, w)?;
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::RidgeConfig;

    #[test]
    fn gamma_endpoints_are_exact_and_interior_matches_formula() {
        let s = GammaSchedule::new(0.8, 0.3, 5).unwrap();
        assert_eq!(s.gamma_at(0).unwrap(), 0.8);
        assert_eq!(s.gamma_at(5).unwrap(), 0.3);
        let half = GammaSchedule::new(0.8, 0.3, 2).unwrap();
        assert!((half.gamma_at(1).unwrap() - 0.55).abs() < 1e-15);
        assert!(s.gamma_at(6).is_err());
    }

    #[test]
    fn gamma_is_monotone_non_increasing() {
        let s = GammaSchedule::new(0.8, 0.3, 17).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..=17 {
            let g = s.gamma_at(k).unwrap();
            assert!(g <= prev);
            assert!((0.3..=0.8).contains(&g));
            prev = g;
        }
    }

    #[test]
    fn gamma_rejects_bad_bounds() {
        assert!(GammaSchedule::new(0.3, 0.8, 5).is_err());
        assert!(GammaSchedule::new(1.2, 0.3, 5).is_err());
        assert!(GammaSchedule::new(0.8, 0.3, 0).is_err());
    }

    #[test]
    fn untrained_species_gets_even_split() {
        let b = ModalityBalancer::new();
        let (ba, bv) = b.beta_weights(7, &[1.0, 2.0], &[3.0], false).unwrap();
        assert_eq!(ba, vec![0.5; 4]);
        assert_eq!(bv, vec![0.5; 4]);
        assert!(b.beta_weights(7, &[1.0], &[1.0], true).is_err());
    }

    #[test]
    fn beta_pairs_sum_to_one_exactly() {
        let mut b = ModalityBalancer::new();
        let mut w = Matrix::zeros(4, 3);
        w.set(0, 0, 3.0_f64.ln());
        w.set(1, 1, -4.2);
        w.set(2, 2, 17.0);
        w.set(3, 0, -0.3);
        b.set_weights(1, w).unwrap();
        let (ba, bv) = b.beta_weights(1, &[1.0, 1.0], &[1.0], false).unwrap();
        assert!((ba[0] - 0.75).abs() < 1e-15);
        for i in 0..4 {
            assert_eq!(ba[i] + bv[i], 1.0);
        }
    }

    fn toy_bank() -> PrototypeBank {
        let mut bank = PrototypeBank::new(1, 0.7).unwrap();
        // Species 0 lives on e0, species 2 on e1, in both modalities.
        let a0 = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let v0 = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        bank.build_species(0, &a0, &v0, &[Intensity::None], 1).unwrap();
        let a2 = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let v2 = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        bank.build_species(2, &a2, &v2, &[Intensity::None], 2).unwrap();
        bank
    }

    #[test]
    fn routing_picks_matching_subspace() {
        let bank = toy_bank();
        assert_eq!(route_species(&[1.0, 0.0], &[1.0, 0.0], &bank).unwrap(), 0);
        assert_eq!(route_species(&[0.0, 1.0], &[0.0, 1.0], &bank).unwrap(), 2);
    }

    #[test]
    fn routing_ties_break_to_lowest_id_and_empty_bank_errors() {
        let bank = toy_bank();
        // Equidistant from both species.
        assert_eq!(route_species(&[1.0, 1.0], &[1.0, 1.0], &bank).unwrap(), 0);
        let empty = PrototypeBank::new(1, 0.7).unwrap();
        assert!(matches!(
            route_species(&[1.0, 0.0], &[1.0, 0.0], &empty),
            Err(CoreError::NoSpeciesPrototypes)
        ));
    }

    /// A tiny model with hand-set heads for prediction tests: d = 2, no
    /// expansion growth, identity-ish behavior via known seeds.
    fn tiny_model(gamma_max: f64, gamma_min: f64) -> HailModel {
        let mut model = HailModel::new(
            2,
            1,
            1,
            GammaSchedule::new(gamma_max, gamma_min, 1).unwrap(),
            RidgeConfig::default(),
            5,
        )
        .unwrap();
        model.w_av = Some(Matrix::zeros(2, 4));
        model
            .species_heads
            .insert(0, crate::model::SpeciesHeads { w_audio: Matrix::zeros(2, 4), w_visual: Matrix::zeros(2, 4) });
        model.species_order.push(0);
        model
    }

    fn tiny_sample() -> FeaturePair {
        let visual = crate::fusion::VisualTensor::from_vec(
            1,
            1,
            2,
            vec![0.4, -0.2],
        )
        .unwrap();
        FeaturePair::new(vec![0.3, 0.1], visual, Intensity::Weak, 0).unwrap()
    }

    #[test]
    fn oracle_routing_requires_species_hint() {
        let model = tiny_model(0.8, 0.3);
        let bank = PrototypeBank::new(1, 0.7).unwrap();
        let fusion = FusionParams::zeros(2);
        let err = predict(&model, &bank, &tiny_sample(), &fusion, 0, RoutingMode::Oracle, None);
        assert!(err.is_err());
        let ok = predict(&model, &bank, &tiny_sample(), &fusion, 0, RoutingMode::Oracle, Some(0));
        assert!(ok.is_ok());
    }

    #[test]
    fn zero_species_heads_reduce_to_scaled_general_head() {
        // K = 1, stage 0, zero species heads: probs = softmax(0.8 * y_av).
        let mut model = tiny_model(0.8, 0.3);
        let mut w_av = Matrix::zeros(2, 4);
        w_av.set(0, 0, 1.0);
        w_av.set(1, 2, -0.5);
        model.w_av = Some(w_av.clone());
        let bank = PrototypeBank::new(1, 0.7).unwrap();
        let fusion = FusionParams::seeded(2, 3);
        let sample = tiny_sample();
        let pred =
            predict(&model, &bank, &sample, &fusion, 0, RoutingMode::Oracle, Some(0)).unwrap();

        let out = fuse_forward(&sample, &fusion).unwrap();
        let f_av = model.expansion_av.expand(&out.fused).unwrap();
        let y_av = w_av.vec_mul(&f_av).unwrap();
        let scaled: Vec<f64> = y_av.iter().map(|v| 0.8 * v).collect();
        let expected = stable_softmax(&scaled).unwrap();
        for (p, e) in pred.probs.iter().zip(&expected) {
            assert!((p - e).abs() < 1e-12);
        }
        assert_eq!(pred.gamma_used, 0.8);
        let total: f64 = pred.probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gamma_zero_with_even_betas_averages_modality_heads() {
        let mut model = tiny_model(0.0, 0.0);
        let mut wa = Matrix::zeros(2, 4);
        wa.set(0, 1, 2.0);
        let mut wv = Matrix::zeros(2, 4);
        wv.set(1, 3, -1.0);
        model
            .species_heads
            .insert(0, crate::model::SpeciesHeads { w_audio: wa.clone(), w_visual: wv.clone() });
        let bank = PrototypeBank::new(1, 0.7).unwrap();
        let fusion = FusionParams::seeded(2, 3);
        let sample = tiny_sample();
        let pred =
            predict(&model, &bank, &sample, &fusion, 1, RoutingMode::Oracle, Some(0)).unwrap();

        let out = fuse_forward(&sample, &fusion).unwrap();
        let f_a = model.expansion_a.expand(&out.enhanced_audio).unwrap();
        let f_v = model.expansion_v.expand(&out.enhanced_visual).unwrap();
        let la = wa.vec_mul(&f_a).unwrap();
        let lv = wv.vec_mul(&f_v).unwrap();
        let mean: Vec<f64> = la.iter().zip(&lv).map(|(a, v)| 0.5 * a + 0.5 * v).collect();
        let expected = stable_softmax(&mean).unwrap();
        for (p, e) in pred.probs.iter().zip(&expected) {
            assert!((p - e).abs() < 1e-12);
        }
    }

    #[test]
    fn balancer_training_prefers_the_informative_modality() {
        // Audio logits are pure noise (zero head); visual logits match the
        // labels. Training should push beta_v above one half.
        let n = 16;
        let mut fa_rows = Vec::new();
        let mut fv_rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let class = i % 4;
            labels.push(Intensity::from_index(class).unwrap());
            fa_rows.push(vec![1.0, 0.0, 0.0, 0.0]);
            let mut fv = vec![0.0; 4];
            fv[class] = 1.0;
            fv_rows.push(fv);
        }
        let f_a = Matrix::from_rows(&fa_rows).unwrap();
        let f_v = Matrix::from_rows(&fv_rows).unwrap();
        let w_audio = Matrix::zeros(4, 4);
        let w_visual = Matrix::identity(4).scale(4.0);

        let mut balancer = ModalityBalancer::new();
        let curve = train_balancer(
            &mut balancer,
            3,
            &f_a,
            &f_v,
            &labels,
            &w_audio,
            &w_visual,
            120,
            0.5,
        )
        .unwrap();
        assert!(curve.last().unwrap() < curve.first().unwrap());
        let mut mean_beta_v = 0.0;
        for r in 0..n {
            let (_, bv) = balancer.beta_weights(3, f_a.row(r), f_v.row(r), true).unwrap();
            mean_beta_v += bv.iter().sum::<f64>() / 4.0;
        }
        mean_beta_v /= n as f64;
        assert!(mean_beta_v > 0.5, "mean beta_v {mean_beta_v}");
    }

    #[test]
    fn zero_learning_rate_leaves_gate_at_even_split() {
        let f_a = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let f_v = Matrix::from_rows(&[vec![0.5]]).unwrap();
        let labels = [Intensity::None];
        let w_audio = Matrix::zeros(2, 4);
        let w_visual = Matrix::zeros(1, 4);
        let mut balancer = ModalityBalancer::new();
        train_balancer(&mut balancer, 0, &f_a, &f_v, &labels, &w_audio, &w_visual, 5, 0.0)
            .unwrap();
        assert_eq!(balancer.weights()[&0], Matrix::zeros(4, 3));
        let (ba, _) = balancer.beta_weights(0, f_a.row(0), f_v.row(0), true).unwrap();
        assert_eq!(ba, vec![0.5; 4]);
    }
}
