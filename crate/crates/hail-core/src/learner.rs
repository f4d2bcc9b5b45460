//! Shared feature extraction and the incremental-learner contract. Every
//! method in the benchmark consumes the same frozen fusion + expansion
//! features, so the incremental-learning mechanism is the only varying
//! factor between rows of a results table.

use crate::error::Result;
use crate::fusion::{fuse_forward, FeaturePair, FusionParams, Intensity};
use crate::linalg::Matrix;
use crate::metrics::{acc_from_counts, Acc};
use crate::model::HailModel;
use crate::synth::SpeciesStage;

/// Expanded features of one data split, row-aligned with `labels`.
#[derive(Debug, Clone)]
pub struct SplitFeatures {
    pub fused: Matrix,
    pub audio: Matrix,
    pub visual: Matrix,
    pub labels: Vec<Intensity>,
}

/// All three splits of one species stage, after fusion and expansion.
#[derive(Debug, Clone)]
pub struct StageFeatures {
    pub species_id: u64,
    pub train: SplitFeatures,
    pub val: SplitFeatures,
    pub test: SplitFeatures,
}

/// One sample's expanded features at prediction time.
#[derive(Debug, Clone, Copy)]
pub struct SampleView<'a> {
    pub fused: &'a [f64],
    pub audio: &'a [f64],
    pub visual: &'a [f64],
    /// True species id, honored only by learners in oracle routing mode.
    pub species_hint: Option<u64>,
}

/// Runs fusion and the model's expansion maps over a list of raw pairs.
pub fn extract_split(
    pairs: &[FeaturePair],
    fusion: &FusionParams,
    model: &HailModel,
) -> Result<SplitFeatures> {
    let mut fused_rows = Vec::with_capacity(pairs.len());
    let mut audio_rows = Vec::with_capacity(pairs.len());
    let mut visual_rows = Vec::with_capacity(pairs.len());
    let mut labels = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let out = fuse_forward(pair, fusion)?;
        fused_rows.push(model.expansion_av.expand(&out.fused)?);
        audio_rows.push(model.expansion_a.expand(&out.enhanced_audio)?);
        visual_rows.push(model.expansion_v.expand(&out.enhanced_visual)?);
        labels.push(pair.intensity);
    }
    Ok(SplitFeatures {
        fused: Matrix::from_rows(&fused_rows)?,
        audio: Matrix::from_rows(&audio_rows)?,
        visual: Matrix::from_rows(&visual_rows)?,
        labels,
    })
}

/// Extracts all three splits of a stage.
pub fn extract_stage(
    stage: &SpeciesStage,
    fusion: &FusionParams,
    model: &HailModel,
) -> Result<StageFeatures> {
    Ok(StageFeatures {
        species_id: stage.species_id,
        train: extract_split(&stage.train, fusion, model)?,
        val: extract_split(&stage.val, fusion, model)?,
        test: extract_split(&stage.test, fusion, model)?,
    })
}

/// A class-incremental learner over the shared feature space. Learners see
/// one species at a time and must answer intensity queries for every species
/// seen so far.
pub trait IncrementalLearner {
    fn name(&self) -> &'static str;
    /// Consumes the next species' training features.
    fn learn_species(&mut self, stage: &StageFeatures) -> Result<()>;
    /// Probability over the four intensity classes.
    fn predict(&self, sample: SampleView<'_>) -> Result<Vec<f64>>;
    /// Bytes of state retained between stages.
    fn retained_bytes(&self) -> usize;
}

/// Argmax with ties broken toward the lowest class index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..values.len() {
        if values[i] > values[best] {
            best = i;
        }
    }
    best
}

/// Exact accuracy of a learner on one split.
pub fn evaluate_accuracy(
    learner: &dyn IncrementalLearner,
    split: &SplitFeatures,
    species_hint: Option<u64>,
) -> Result<Acc> {
    let n = split.fused.rows();
    let mut correct = 0u64;
    for r in 0..n {
        let probs = learner.predict(SampleView {
            fused: split.fused.row(r),
            audio: split.audio.row(r),
            visual: split.visual.row(r),
            species_hint,
        })?;
        if argmax(&probs) == split.labels[r].index() {
            correct += 1;
        }
    }
    acc_from_counts(correct, n as u64)
}
