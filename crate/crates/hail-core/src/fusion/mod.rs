//! Cross-modal attention fusion. An audio vector and an L x S x d visual
//! tensor score each other through Tanh projections; spatial weights pool the
//! visual tensor per frame, temporal weights pool across frames, and an
//! audio-channel weighting reshapes the audio vector. The enhanced features
//! are projected and summed into one fused vector, with a cosine alignment
//! penalty available as an auxiliary training loss.
//!
//! Vector-matrix convention throughout: (x · W)_j = sum_i x_i W[i,j].

mod backward;
mod train;

pub use backward::{fusion_gradients, FusionGrads};
pub use train::{
    analytic_batch_gradients, fd_batch_gradients, mean_batch_loss, train_fusion, GradMode,
};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::linalg::{cosine_similarity, stable_softmax, Matrix};

pub const DEFAULT_LAMBDA_SIM: f64 = 0.1;

/// Feeding intensity label; the class set is fixed for every species.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Intensity {
    None,
    Weak,
    Medium,
    Strong,
}

impl Intensity {
    pub const COUNT: usize = 4;
    pub const ALL: [Intensity; 4] =
        [Intensity::None, Intensity::Weak, Intensity::Medium, Intensity::Strong];

    pub fn index(self) -> usize {
        match self {
            Intensity::None => 0,
            Intensity::Weak => 1,
            Intensity::Medium => 2,
            Intensity::Strong => 3,
        }
    }

    pub fn from_index(i: usize) -> Result<Intensity> {
        Intensity::ALL
            .get(i)
            .copied()
            .ok_or_else(|| CoreError::InvalidArgument(format!("intensity index {i} out of range")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Intensity::None => "none",
            Intensity::Weak => "weak",
            Intensity::Medium => "medium",
            Intensity::Strong => "strong",
        }
    }
}

/// Frames x spatial x channels tensor stored row-major as [l][s][c].
#[derive(Debug, Clone, PartialEq)]
pub struct VisualTensor {
    frames: usize,
    spatial: usize,
    channels: usize,
    data: Vec<f64>,
}

impl VisualTensor {
    pub fn zeros(frames: usize, spatial: usize, channels: usize) -> Self {
        VisualTensor { frames, spatial, channels, data: vec![0.0; frames * spatial * channels] }
    }

    pub fn from_vec(frames: usize, spatial: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * spatial * channels {
            return Err(CoreError::DimensionMismatch(format!(
                "visual tensor {frames}x{spatial}x{channels} needs {} entries, got {}",
                frames * spatial * channels,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite("visual tensor construction".into()));
        }
        Ok(VisualTensor { frames, spatial, channels, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn spatial(&self) -> usize {
        self.spatial
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn get(&self, l: usize, s: usize, c: usize) -> f64 {
        self.data[(l * self.spatial + s) * self.channels + c]
    }

    pub fn set(&mut self, l: usize, s: usize, c: usize, v: f64) {
        self.data[(l * self.spatial + s) * self.channels + c] = v;
    }

    /// Channel slice at one (frame, spatial) location.
    pub fn loc(&self, l: usize, s: usize) -> &[f64] {
        let base = (l * self.spatial + s) * self.channels;
        &self.data[base..base + self.channels]
    }

    pub fn loc_mut(&mut self, l: usize, s: usize) -> &mut [f64] {
        let base = (l * self.spatial + s) * self.channels;
        &mut self.data[base..base + self.channels]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// One sample: an audio feature vector and the matching visual tensor.
#[derive(Debug, Clone)]
pub struct FeaturePair {
    pub audio: Vec<f64>,
    pub visual: VisualTensor,
    pub intensity: Intensity,
    pub species_id: u64,
}

impl FeaturePair {
    pub fn new(
        audio: Vec<f64>,
        visual: VisualTensor,
        intensity: Intensity,
        species_id: u64,
    ) -> Result<Self> {
        if audio.len() != visual.channels() {
            return Err(CoreError::DimensionMismatch(format!(
                "audio length {} vs visual channels {}",
                audio.len(),
                visual.channels()
            )));
        }
        if !audio.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite("audio feature".into()));
        }
        Ok(FeaturePair { audio, visual, intensity, species_id })
    }

    pub fn dim(&self) -> usize {
        self.audio.len()
    }
}

/// Trainable fusion weights: two d x d scoring projections and two d x d
/// output projections.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub w_audio: Matrix,
    pub w_visual: Matrix,
    pub u_audio: Matrix,
    pub u_visual: Matrix,
}

impl FusionParams {
    pub fn zeros(dim: usize) -> Self {
        FusionParams {
            w_audio: Matrix::zeros(dim, dim),
            w_visual: Matrix::zeros(dim, dim),
            u_audio: Matrix::zeros(dim, dim),
            u_visual: Matrix::zeros(dim, dim),
        }
    }

    /// Seeded uniform initialization at scale 1/sqrt(dim). A zero start is a
    /// stationary point of the training loss (the fused vector vanishes), so
    /// training always begins from a random draw.
    pub fn seeded(dim: usize, seed: u64) -> Self {
        let scale = 1.0 / (dim as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |_: usize| {
            let data: Vec<f64> =
                (0..dim * dim).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale).collect();
            Matrix::from_vec(dim, dim, data).expect("finite by construction")
        };
        FusionParams { w_audio: draw(0), w_visual: draw(1), u_audio: draw(2), u_visual: draw(3) }
    }

    pub fn dim(&self) -> usize {
        self.w_audio.rows()
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        let square = |m: &Matrix| m.rows() == d && m.cols() == d;
        if square(&self.w_audio) && square(&self.w_visual) && square(&self.u_audio)
            && square(&self.u_visual)
        {
            Ok(())
        } else {
            Err(CoreError::DimensionMismatch(format!(
                "fusion params are not uniformly {d}x{d}"
            )))
        }
    }
}

/// Everything the forward pass produces, including the attention maps that
/// the backward pass and the diagnostics need.
#[derive(Debug, Clone)]
pub struct FusedOutput {
    /// Tanh-projected audio scores, length d.
    pub score_audio: Vec<f64>,
    /// Tanh-projected visual scores, L x S x d.
    pub score_visual: VisualTensor,
    /// Spatial attention; sums to 1 over S at every (frame, channel).
    pub spatial_weights: VisualTensor,
    /// Spatially pooled visual scores per frame, L x d.
    pub frame_scores: Matrix,
    /// Temporal attention; sums to 1 over L at every channel.
    pub temporal_weights: Matrix,
    /// Audio channel attention; sums to 1 over d.
    pub audio_weights: Vec<f64>,
    pub enhanced_visual: Vec<f64>,
    pub enhanced_audio: Vec<f64>,
    /// Tanh(enhanced_visual · U_v) + Tanh(enhanced_audio · U_a).
    pub fused: Vec<f64>,
    /// 1 - cos(enhanced_visual, enhanced_audio); exactly 1 when either
    /// enhanced vector has zero norm.
    pub sim_loss: f64,
}

fn tanh_vec_mat(x: &[f64], w: &Matrix) -> Result<Vec<f64>> {
    Ok(w.vec_mul(x)?.into_iter().map(f64::tanh).collect())
}

/// Runs the full attention fusion for one sample.
pub fn fuse_forward(pair: &FeaturePair, params: &FusionParams) -> Result<FusedOutput> {
    let d = pair.dim();
    params.check_dim(d)?;
    let frames = pair.visual.frames();
    let spatial = pair.visual.spatial();
    if frames == 0 || spatial == 0 || d == 0 {
        return Err(CoreError::InvalidArgument("empty visual tensor or feature".into()));
    }

    let score_audio = tanh_vec_mat(&pair.audio, &params.w_audio)?;

    let mut score_visual = VisualTensor::zeros(frames, spatial, d);
    for l in 0..frames {
        for s in 0..spatial {
            let scored = tanh_vec_mat(pair.visual.loc(l, s), &params.w_visual)?;
            score_visual.loc_mut(l, s).copy_from_slice(&scored);
        }
    }

    // Spatial attention: per frame and channel, softmax over spatial
    // positions of (audio score * visual score).
    let mut spatial_weights = VisualTensor::zeros(frames, spatial, d);
    for l in 0..frames {
        for c in 0..d {
            let col: Vec<f64> =
                (0..spatial).map(|s| score_audio[c] * score_visual.get(l, s, c)).collect();
            let w = stable_softmax(&col)?;
            for s in 0..spatial {
                spatial_weights.set(l, s, c, w[s]);
            }
        }
    }

    // Pool scores over space, then softmax over frames per channel.
    let mut frame_scores = Matrix::zeros(frames, d);
    for l in 0..frames {
        for c in 0..d {
            let pooled: f64 =
                (0..spatial).map(|s| spatial_weights.get(l, s, c) * score_visual.get(l, s, c)).sum();
            frame_scores.set(l, c, pooled);
        }
    }
    let mut temporal_weights = Matrix::zeros(frames, d);
    for c in 0..d {
        let col: Vec<f64> = (0..frames).map(|l| frame_scores.get(l, c)).collect();
        let w = stable_softmax(&col)?;
        for l in 0..frames {
            temporal_weights.set(l, c, w[l]);
        }
    }

    // Audio attention: visual scores averaged over frames and space gate the
    // audio score, softmaxed over channels.
    let inv = 1.0 / (frames * spatial) as f64;
    let mut gate = vec![0.0; d];
    for l in 0..frames {
        for s in 0..spatial {
            for (g, v) in gate.iter_mut().zip(score_visual.loc(l, s)) {
                *g += v;
            }
        }
    }
    for (g, a) in gate.iter_mut().zip(&score_audio) {
        *g = *g * inv * a;
    }
    let audio_weights = stable_softmax(&gate)?;

    // Enhanced features: attention-pooled raw visual, channel-gated audio.
    let mut enhanced_visual = vec![0.0; d];
    for l in 0..frames {
        for c in 0..d {
            let pooled: f64 =
                (0..spatial).map(|s| pair.visual.get(l, s, c) * spatial_weights.get(l, s, c)).sum();
            enhanced_visual[c] += temporal_weights.get(l, c) * pooled;
        }
    }
    let enhanced_audio: Vec<f64> =
        pair.audio.iter().zip(&audio_weights).map(|(a, w)| a * w).collect();

    let proj_v = tanh_vec_mat(&enhanced_visual, &params.u_visual)?;
    let proj_a = tanh_vec_mat(&enhanced_audio, &params.u_audio)?;
    let fused: Vec<f64> = proj_v.iter().zip(&proj_a).map(|(v, a)| v + a).collect();

    // Alignment penalty; a zero-norm side contributes the neutral value 1.
    let sim_loss = match cosine_similarity(&enhanced_visual, &enhanced_audio) {
        Ok(c) => 1.0 - c,
        Err(CoreError::ZeroNorm(_)) => 1.0,
        Err(e) => return Err(e),
    };

    Ok(FusedOutput {
        score_audio,
        score_visual,
        spatial_weights,
        frame_scores,
        temporal_weights,
        audio_weights,
        enhanced_visual,
        enhanced_audio,
        fused,
        sim_loss,
    })
}

/// Training loss for one sample: cross-entropy of the fused classification
/// logits plus `lambda_sim` times the modality alignment penalty.
pub fn fusion_loss(
    output: &FusedOutput,
    head: &Matrix,
    label: Intensity,
    lambda_sim: f64,
) -> Result<f64> {
    if head.rows() != output.fused.len() || head.cols() != Intensity::COUNT {
        return Err(CoreError::DimensionMismatch(format!(
            "fusion head {}x{} vs fused dim {} and {} classes",
            head.rows(),
            head.cols(),
            output.fused.len(),
            Intensity::COUNT
        )));
    }
    if !(lambda_sim.is_finite() && lambda_sim >= 0.0) {
        return Err(CoreError::InvalidArgument("lambda_sim must be finite and >= 0".into()));
    }
    // A label probability that underflows to zero legitimately yields an
    // infinite loss; the training loop aborts on it with a diagnostic.
    let logits = head.vec_mul(&output.fused)?;
    let probs = stable_softmax(&logits)?;
    Ok(-probs[label.index()].ln() + lambda_sim * output.sim_loss)
}
