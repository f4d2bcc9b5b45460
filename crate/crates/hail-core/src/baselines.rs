//! Reference incremental learners over the shared expanded fused features:
//! naive fine-tuning, learning-without-forgetting distillation, elastic
//! weight consolidation, nearest-mean-of-exemplars with herding, and a
//! joint-training upper bound that keeps everything. All heads are linear
//! over the frozen feature space, so the forgetting mechanism is the only
//! thing that differs between methods.

use std::collections::BTreeMap;

use crate::error::{CoreError, Result};
use crate::fusion::Intensity;
use crate::learner::{IncrementalLearner, SampleView, StageFeatures};
use crate::linalg::{ridge_solve, stable_softmax, Matrix, RidgeConfig};
use crate::model::one_hot;

/// Step count and learning rate for the gradient-trained heads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdConfig {
    pub steps: usize,
    pub lr: f64,
}

impl Default for GdConfig {
    fn default() -> Self {
        GdConfig { steps: 150, lr: 0.5 }
    }
}

impl GdConfig {
    fn validate(&self) -> Result<()> {
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(CoreError::InvalidArgument(format!("bad learning rate {}", self.lr)));
        }
        Ok(())
    }
}

/// Mean cross-entropy of softmax(F W) against the labels.
fn ce_loss(w: &Matrix, f: &Matrix, labels: &[Intensity]) -> Result<f64> {
    let logits = f.matmul(w)?;
    let mut total = 0.0;
    for r in 0..f.rows() {
        let probs = stable_softmax(logits.row(r))?;
        total += -probs[labels[r].index()].ln();
    }
    Ok(total / f.rows() as f64)
}

/// Mean-batch gradient of `ce_loss` with respect to the head.
fn ce_grad(w: &Matrix, f_t: &Matrix, f: &Matrix, labels: &[Intensity]) -> Result<Matrix> {
    let logits = f.matmul(w)?;
    let mut delta = Matrix::zeros(f.rows(), w.cols());
    for r in 0..f.rows() {
        let probs = stable_softmax(logits.row(r))?;
        let row = delta.row_mut(r);
        for c in 0..probs.len() {
            row[c] = probs[c] - if labels[r].index() == c { 1.0 } else { 0.0 };
        }
    }
    Ok(f_t.matmul(&delta)?.scale(1.0 / f.rows() as f64))
}

/// Temperature-softened probabilities per row of F W.
fn soft_probs(w: &Matrix, f: &Matrix, temperature: f64) -> Result<Matrix> {
    let logits = f.matmul(w)?;
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        let scaled: Vec<f64> = logits.row(r).iter().map(|v| v / temperature).collect();
        let probs = stable_softmax(&scaled)?;
        out.row_mut(r).copy_from_slice(&probs);
    }
    Ok(out)
}

/// KL(p || q) for row-aligned probability matrices; zero p-entries
/// contribute nothing.
fn mean_kl(p: &Matrix, q: &Matrix) -> f64 {
    let mut total = 0.0;
    for r in 0..p.rows() {
        for (pi, qi) in p.row(r).iter().zip(q.row(r)) {
            if *pi > 0.0 {
                total += pi * (pi.ln() - qi.ln());
            }
        }
    }
    total / p.rows() as f64
}

fn softmax_probs(w: &Matrix, fused: &[f64]) -> Result<Vec<f64>> {
    stable_softmax(&w.vec_mul(fused)?)
}

/// Plain gradient descent on the current species only; the method that
/// exists to exhibit catastrophic forgetting.
#[derive(Debug, Clone)]
pub struct Finetune {
    head: Option<Matrix>,
    gd: GdConfig,
}

impl Finetune {
    pub fn new(gd: GdConfig) -> Result<Self> {
        gd.validate()?;
        Ok(Finetune { head: None, gd })
    }

    pub fn head(&self) -> Option<&Matrix> {
        self.head.as_ref()
    }
}

fn gd_ce(
    start: Option<&Matrix>,
    f: &Matrix,
    labels: &[Intensity],
    gd: GdConfig,
) -> Result<Matrix> {
    let mut w = match start {
        Some(h) => h.clone(),
        None => Matrix::zeros(f.cols(), Intensity::COUNT),
    };
    let f_t = f.transpose();
    for step in 0..gd.steps {
        let loss = ce_loss(&w, f, labels)?;
        if !loss.is_finite() {
            return Err(CoreError::NonFiniteLoss { step });
        }
        if gd.lr == 0.0 {
            continue;
        }
        let grad = ce_grad(&w, &f_t, f, labels)?;
        w = w.sub(&grad.scale(gd.lr))?;
    }
    Ok(w)
}

impl IncrementalLearner for Finetune {
    fn name(&self) -> &'static str {
        "finetune"
    }

    fn learn_species(&mut self, stage: &StageFeatures) -> Result<()> {
        self.head = Some(gd_ce(self.head.as_ref(), &stage.train.fused, &stage.train.labels, self.gd)?);
        Ok(())
    }

    fn predict(&self, sample: SampleView<'_>) -> Result<Vec<f64>> {
        let w = self.head.as_ref().ok_or(CoreError::NoSpeciesLearned)?;
        softmax_probs(w, sample.fused)
    }

    fn retained_bytes(&self) -> usize {
        self.head.as_ref().map_or(0, Matrix::byte_len)
    }
}

/// Fine-tuning plus a distillation term that holds new outputs near the
/// previous head's softened predictions.
#[derive(Debug, Clone)]
pub struct Lwf {
    head: Option<Matrix>,
    lambda: f64,
    temperature: f64,
    gd: GdConfig,
}

impl Lwf {
    pub fn new(lambda: f64, temperature: f64, gd: GdConfig) -> Result<Self> {
        gd.validate()?;
        if !(0.0..=1.0).contains(&lambda) {
            return Err(CoreError::InvalidArgument(format!(
                "distillation weight must lie in [0, 1], got {lambda}"
            )));
        }
        if temperature <= 0.0 || !temperature.is_finite() {
            return Err(CoreError::InvalidArgument(format!("bad temperature {temperature}")));
        }
        Ok(Lwf { head: None, lambda, temperature, gd })
    }

    pub fn head(&self) -> Option<&Matrix> {
        self.head.as_ref()
    }
}

impl IncrementalLearner for Lwf {
    fn name(&self) -> &'static str {
        "lwf"
    }

    fn learn_species(&mut self, stage: &StageFeatures) -> Result<()> {
        let f = &stage.train.fused;
        let labels = &stage.train.labels;
        // First species: nothing to distill from.
        let old = match &self.head {
            None => {
                self.head = Some(gd_ce(None, f, labels, self.gd)?);
                return Ok(());
            }
            Some(h) => h.clone(),
        };
        let t = self.temperature;
        let targets = soft_probs(&old, f, t)?;
        let mut w = old.clone();
        let f_t = f.transpose();
        for step in 0..self.gd.steps {
            let mut loss = 0.0;
            if self.lambda > 0.0 {
                loss += self.lambda * ce_loss(&w, f, labels)?;
            }
            if self.lambda < 1.0 {
                loss += (1.0 - self.lambda) * mean_kl(&targets, &soft_probs(&w, f, t)?);
            }
            if !loss.is_finite() {
                return Err(CoreError::NonFiniteLoss { step });
            }
            if self.gd.lr == 0.0 {
                continue;
            }
            let mut grad = Matrix::zeros(w.rows(), w.cols());
            if self.lambda > 0.0 {
                grad = grad.add(&ce_grad(&w, &f_t, f, labels)?.scale(self.lambda))?;
            }
            if self.lambda < 1.0 {
                // d KL(p || softmax(u/T)) / du = (softmax(u/T) - p) / T.
                let q = soft_probs(&w, f, t)?;
                let delta = q.sub(&targets)?;
                let kl_grad =
                    f_t.matmul(&delta)?.scale((1.0 - self.lambda) / (t * f.rows() as f64));
                grad = grad.add(&kl_grad)?;
            }
            w = w.sub(&grad.scale(self.gd.lr))?;
        }
        self.head = Some(w);
        Ok(())
    }

    fn predict(&self, sample: SampleView<'_>) -> Result<Vec<f64>> {
        let w = self.head.as_ref().ok_or(CoreError::NoSpeciesLearned)?;
        softmax_probs(w, sample.fused)
    }

    fn retained_bytes(&self) -> usize {
        self.head.as_ref().map_or(0, Matrix::byte_len)
    }
}

/// Fine-tuning with a quadratic penalty that anchors weights deemed
/// important for the previous species, importance measured by the diagonal
/// empirical Fisher information.
#[derive(Debug, Clone)]
pub struct Ewc {
    head: Option<Matrix>,
    theta_star: Option<Matrix>,
    fisher: Option<Matrix>,
    lambda: f64,
    gd: GdConfig,
}

impl Ewc {
    pub fn new(lambda: f64, gd: GdConfig) -> Result<Self> {
        gd.validate()?;
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(CoreError::InvalidArgument(format!(
                "penalty weight must be >= 0, got {lambda}"
            )));
        }
        Ok(Ewc { head: None, theta_star: None, fisher: None, lambda, gd })
    }

    pub fn head(&self) -> Option<&Matrix> {
        self.head.as_ref()
    }

    pub fn fisher(&self) -> Option<&Matrix> {
        self.fisher.as_ref()
    }

    /// Diagonal empirical Fisher: mean squared per-sample gradient of the
    /// log-likelihood at `w`.
    pub fn empirical_fisher(w: &Matrix, f: &Matrix, labels: &[Intensity]) -> Result<Matrix> {
        let logits = f.matmul(w)?;
        let mut fisher = Matrix::zeros(w.rows(), w.cols());
        for r in 0..f.rows() {
            let probs = stable_softmax(logits.row(r))?;
            let x = f.row(r);
            for c in 0..probs.len() {
                let g = probs[c] - if labels[r].index() == c { 1.0 } else { 0.0 };
                if g == 0.0 {
                    continue;
                }
                for (j, xj) in x.iter().enumerate() {
                    let grad = g * xj;
                    fisher.row_mut(j)[c] += grad * grad;
                }
            }
        }
        Ok(fisher.scale(1.0 / f.rows() as f64))
    }
}

impl IncrementalLearner for Ewc {
    fn name(&self) -> &'static str {
        "ewc"
    }

    fn learn_species(&mut self, stage: &StageFeatures) -> Result<()> {
        let f = &stage.train.fused;
        let labels = &stage.train.labels;
        let mut w = match &self.head {
            Some(h) => h.clone(),
            None => Matrix::zeros(f.cols(), Intensity::COUNT),
        };
        let anchored = self.lambda > 0.0 && self.theta_star.is_some();
        let f_t = f.transpose();
        for step in 0..self.gd.steps {
            let mut loss = ce_loss(&w, f, labels)?;
            if anchored {
                let star = self.theta_star.as_ref().unwrap();
                let fisher = self.fisher.as_ref().unwrap();
                let mut penalty = 0.0;
                for i in 0..w.rows() {
                    for (c, fi) in fisher.row(i).iter().enumerate() {
                        let dv = w.row(i)[c] - star.row(i)[c];
                        penalty += fi * dv * dv;
                    }
                }
                loss += 0.5 * self.lambda * penalty;
            }
            if !loss.is_finite() {
                return Err(CoreError::NonFiniteLoss { step });
            }
            if self.gd.lr == 0.0 {
                continue;
            }
            let grad = ce_grad(&w, &f_t, f, labels)?;
            let mut stepped = w.sub(&grad.scale(self.gd.lr))?;
            if anchored {
                // Proximal update on the quadratic penalty: exact minimizer
                // of (1/2lr)|z - stepped|^2 + (lambda/2) F (z - theta*)^2,
                // stable for arbitrarily large lambda.
                let star = self.theta_star.as_ref().unwrap();
                let fisher = self.fisher.as_ref().unwrap();
                for i in 0..stepped.rows() {
                    let row = stepped.row_mut(i);
                    for (c, fi) in fisher.row(i).iter().enumerate() {
                        let pull = self.gd.lr * self.lambda * fi;
                        row[c] = (row[c] + pull * star.row(i)[c]) / (1.0 + pull);
                    }
                }
            }
            w = stepped;
        }
        self.fisher = Some(Self::empirical_fisher(&w, f, labels)?);
        self.theta_star = Some(w.clone());
        self.head = Some(w);
        Ok(())
    }

    fn predict(&self, sample: SampleView<'_>) -> Result<Vec<f64>> {
        let w = self.head.as_ref().ok_or(CoreError::NoSpeciesLearned)?;
        softmax_probs(w, sample.fused)
    }

    fn retained_bytes(&self) -> usize {
        [&self.head, &self.theta_star, &self.fisher]
            .iter()
            .map(|m| m.as_ref().map_or(0, Matrix::byte_len))
            .sum()
    }
}

/// Nearest-mean-of-exemplars over (species, intensity) classes, with
/// herding selection under a fixed per-class budget.
#[derive(Debug, Clone)]
pub struct IcarlNme {
    budget: usize,
    /// (species, intensity index) -> herding-ranked (original row, feature).
    exemplars: BTreeMap<(u64, usize), Vec<(usize, Vec<f64>)>>,
    means: BTreeMap<(u64, usize), Vec<f64>>,
}

impl IcarlNme {
    pub fn new(budget: usize) -> Result<Self> {
        if budget == 0 {
            return Err(CoreError::InvalidArgument("exemplar budget must be >= 1".into()));
        }
        Ok(IcarlNme { budget, exemplars: BTreeMap::new(), means: BTreeMap::new() })
    }

    pub fn exemplar_count(&self) -> usize {
        self.exemplars.values().map(Vec::len).sum()
    }

    pub fn class_mean(&self, species: u64, intensity: Intensity) -> Option<&[f64]> {
        self.means.get(&(species, intensity.index())).map(Vec::as_slice)
    }

    /// Mean over the exemplars in original row order, which reproduces the
    /// full class mean bit-for-bit when the budget covers the whole class.
    fn mean_of(exemplars: &[(usize, Vec<f64>)]) -> Vec<f64> {
        let mut order: Vec<&(usize, Vec<f64>)> = exemplars.iter().collect();
        order.sort_by_key(|(orig, _)| *orig);
        let d = order[0].1.len();
        let mut sum = vec![0.0; d];
        for (_, row) in order {
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
        }
        let n = exemplars.len() as f64;
        sum.iter_mut().for_each(|s| *s /= n);
        sum
    }

    /// Greedy herding: each pick minimizes the distance between the running
    /// exemplar mean and the class mean; ties keep the earliest row.
    fn herd(rows: &[(usize, &[f64])], mu: &[f64], budget: usize) -> Vec<(usize, Vec<f64>)> {
        let d = mu.len();
        let mut chosen: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut sum = vec![0.0; d];
        let mut used = vec![false; rows.len()];
        let picks = budget.min(rows.len());
        for k in 1..=picks {
            let mut best: Option<usize> = None;
            let mut best_dist = f64::INFINITY;
            for (ri, (_, row)) in rows.iter().enumerate() {
                if used[ri] {
                    continue;
                }
                let mut dist = 0.0;
                for j in 0..d {
                    let m = (sum[j] + row[j]) / k as f64;
                    dist += (mu[j] - m) * (mu[j] - m);
                }
                if dist < best_dist {
                    best_dist = dist;
                    best = Some(ri);
                }
            }
            let ri = best.expect("at least one unused row remains");
            used[ri] = true;
            for (s, v) in sum.iter_mut().zip(rows[ri].1) {
                *s += v;
            }
            chosen.push((rows[ri].0, rows[ri].1.to_vec()));
        }
        chosen
    }
}

impl IncrementalLearner for IcarlNme {
    fn name(&self) -> &'static str {
        "icarl_nme"
    }

    fn learn_species(&mut self, stage: &StageFeatures) -> Result<()> {
        let f = &stage.train.fused;
        for intensity in Intensity::ALL {
            let rows: Vec<(usize, &[f64])> = stage
                .train
                .labels
                .iter()
                .enumerate()
                .filter(|(_, l)| **l == intensity)
                .map(|(r, _)| (r, f.row(r)))
                .collect();
            if rows.is_empty() {
                continue;
            }
            let mut mu = vec![0.0; f.cols()];
            for (_, row) in &rows {
                for (m, v) in mu.iter_mut().zip(*row) {
                    *m += v;
                }
            }
            mu.iter_mut().for_each(|m| *m /= rows.len() as f64);

            let mut picked = Self::herd(&rows, &mu, self.budget);
            picked.truncate(self.budget);
            let key = (stage.species_id, intensity.index());
            self.means.insert(key, Self::mean_of(&picked));
            self.exemplars.insert(key, picked);
        }
        Ok(())
    }

    fn predict(&self, sample: SampleView<'_>) -> Result<Vec<f64>> {
        if self.means.is_empty() {
            return Err(CoreError::NoSpeciesLearned);
        }
        // Closest class mean per intensity, across species.
        let mut present: Vec<(usize, f64)> = Vec::new();
        for i in 0..Intensity::COUNT {
            let mut best: Option<f64> = None;
            for ((_, ii), mu) in &self.means {
                if *ii != i {
                    continue;
                }
                let dist: f64 = sample
                    .fused
                    .iter()
                    .zip(mu)
                    .map(|(x, m)| (x - m) * (x - m))
                    .sum::<f64>()
                    .sqrt();
                best = Some(match best {
                    None => dist,
                    Some(b) => b.min(dist),
                });
            }
            if let Some(d) = best {
                present.push((i, -d));
            }
        }
        let scores: Vec<f64> = present.iter().map(|(_, s)| *s).collect();
        let soft = stable_softmax(&scores)?;
        let mut probs = vec![0.0; Intensity::COUNT];
        for ((i, _), p) in present.iter().zip(soft) {
            probs[*i] = p;
        }
        Ok(probs)
    }

    fn retained_bytes(&self) -> usize {
        let f = std::mem::size_of::<f64>();
        let ex: usize =
            self.exemplars.values().map(|v| v.iter().map(|(_, r)| r.len() * f).sum::<usize>()).sum();
        let means: usize = self.means.values().map(|m| m.len() * f).sum();
        ex + means
    }
}

/// Keeps every stage's features and refits a single ridge head over all of
/// them; the benchmark's upper-bound row.
#[derive(Debug, Clone)]
pub struct JointUpper {
    stages: Vec<(Matrix, Vec<Intensity>)>,
    head: Option<Matrix>,
    ridge: RidgeConfig,
}

impl JointUpper {
    pub fn new(ridge: RidgeConfig) -> Self {
        JointUpper { stages: Vec::new(), head: None, ridge }
    }

    pub fn head(&self) -> Option<&Matrix> {
        self.head.as_ref()
    }
}

impl IncrementalLearner for JointUpper {
    fn name(&self) -> &'static str {
        "joint_upper"
    }

    fn learn_species(&mut self, stage: &StageFeatures) -> Result<()> {
        self.stages.push((stage.train.fused.clone(), stage.train.labels.clone()));
        let blocks: Vec<&Matrix> = self.stages.iter().map(|(f, _)| f).collect();
        let all = Matrix::vstack(&blocks)?;
        let labels: Vec<Intensity> =
            self.stages.iter().flat_map(|(_, l)| l.iter().copied()).collect();
        self.head = Some(ridge_solve(&all, &one_hot(&labels), self.ridge)?);
        Ok(())
    }

    fn predict(&self, sample: SampleView<'_>) -> Result<Vec<f64>> {
        let w = self.head.as_ref().ok_or(CoreError::NoSpeciesLearned)?;
        softmax_probs(w, sample.fused)
    }

    fn retained_bytes(&self) -> usize {
        let data: usize = self.stages.iter().map(|(f, l)| f.byte_len() + l.len()).sum();
        data + self.head.as_ref().map_or(0, Matrix::byte_len)
    }
}
