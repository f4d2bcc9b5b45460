//! Gradient-descent training for the fusion parameters and a small
//! classification head. The whole provided set is treated as one batch per
//! step, so training is deterministic given the inputs.

use crate::error::{CoreError, Result};
use crate::fusion::backward::{fusion_gradients, FusionGrads};
use crate::fusion::{fuse_forward, fusion_loss, FeaturePair, FusionParams, Intensity};
use crate::linalg::Matrix;

/// How gradients are computed. `FiniteDifference` is the slow reference mode;
/// `Analytic` is the hand-derived backward pass and must agree with it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    Analytic,
    FiniteDifference,
}

/// Mean training loss of a batch at the given parameters.
pub fn mean_batch_loss(
    pairs: &[FeaturePair],
    params: &FusionParams,
    head: &Matrix,
    lambda_sim: f64,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(CoreError::InvalidArgument("empty training batch".into()));
    }
    let mut total = 0.0;
    for pair in pairs {
        let out = fuse_forward(pair, params)?;
        total += fusion_loss(&out, head, pair.intensity, lambda_sim)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Mean analytic gradients over a batch.
pub fn analytic_batch_gradients(
    pairs: &[FeaturePair],
    params: &FusionParams,
    head: &Matrix,
    lambda_sim: f64,
) -> Result<FusionGrads> {
    if pairs.is_empty() {
        return Err(CoreError::InvalidArgument("empty training batch".into()));
    }
    let d = params.dim();
    let mut total = FusionGrads::zeros(d);
    let w = 1.0 / pairs.len() as f64;
    for pair in pairs {
        let out = fuse_forward(pair, params)?;
        let g = fusion_gradients(pair, params, head, &out, pair.intensity, lambda_sim)?;
        total.accumulate(&g, w);
    }
    Ok(total)
}

/// Central finite differences over every parameter entry; the reference
/// gradient. Quadratic in parameter count, intended for small shapes.
pub fn fd_batch_gradients(
    pairs: &[FeaturePair],
    params: &FusionParams,
    head: &Matrix,
    lambda_sim: f64,
    step: f64,
) -> Result<FusionGrads> {
    let d = params.dim();
    let mut grads = FusionGrads::zeros(d);

    let probe = |select: &dyn for<'a> Fn(&'a mut FusionParams, &'a mut Matrix) -> &'a mut Matrix,
                     out: &mut Matrix|
     -> Result<()> {
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                let mut p_plus = params.clone();
                let mut h_plus = head.clone();
                {
                    let target = select(&mut p_plus, &mut h_plus);
                    target.set(r, c, target.get(r, c) + step);
                }
                let up = mean_batch_loss(pairs, &p_plus, &h_plus, lambda_sim)?;

                let mut p_minus = params.clone();
                let mut h_minus = head.clone();
                {
                    let target = select(&mut p_minus, &mut h_minus);
                    target.set(r, c, target.get(r, c) - step);
                }
                let down = mean_batch_loss(pairs, &p_minus, &h_minus, lambda_sim)?;

                out.set(r, c, (up - down) / (2.0 * step));
            }
        }
        Ok(())
    };

    let mut w_audio = Matrix::zeros(d, d);
    probe(&|p, _| &mut p.w_audio, &mut w_audio)?;
    let mut w_visual = Matrix::zeros(d, d);
    probe(&|p, _| &mut p.w_visual, &mut w_visual)?;
    let mut u_audio = Matrix::zeros(d, d);
    probe(&|p, _| &mut p.u_audio, &mut u_audio)?;
    let mut u_visual = Matrix::zeros(d, d);
    probe(&|p, _| &mut p.u_visual, &mut u_visual)?;
    let mut head_g = Matrix::zeros(d, Intensity::COUNT);
    probe(&|_, h| h, &mut head_g)?;

    grads.w_audio = w_audio;
    grads.w_visual = w_visual;
    grads.u_audio = u_audio;
    grads.u_visual = u_visual;
    grads.head = head_g;
    Ok(grads)
}

fn apply_update(m: &mut Matrix, g: &Matrix, lr: f64) {
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            m.set(r, c, m.get(r, c) - lr * g.get(r, c));
        }
    }
}

/// Runs `steps` full-batch gradient descent updates on the fusion parameters
/// and head. Returns the updated parameters, the updated head, and the mean
/// loss recorded before each update. Aborts on a non-finite loss.
pub fn train_fusion(
    pairs: &[FeaturePair],
    params: FusionParams,
    head: Matrix,
    steps: usize,
    lr: f64,
    grad_mode: GradMode,
    lambda_sim: f64,
) -> Result<(FusionParams, Matrix, Vec<f64>)> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(CoreError::InvalidArgument(format!("learning rate {lr} must be >= 0")));
    }
    let mut params = params;
    let mut head = head;
    let mut trace = Vec::with_capacity(steps);

    for step in 0..steps {
        let loss = mean_batch_loss(pairs, &params, &head, lambda_sim)?;
        if !loss.is_finite() {
            return Err(CoreError::NonFiniteLoss { step });
        }
        trace.push(loss);

        let grads = match grad_mode {
            GradMode::Analytic => analytic_batch_gradients(pairs, &params, &head, lambda_sim)?,
            GradMode::FiniteDifference => {
                fd_batch_gradients(pairs, &params, &head, lambda_sim, 1e-5)?
            }
        };
        apply_update(&mut params.w_audio, &grads.w_audio, lr);
        apply_update(&mut params.w_visual, &grads.w_visual, lr);
        apply_update(&mut params.u_audio, &grads.u_audio, lr);
        apply_update(&mut params.u_visual, &grads.u_visual, lr);
        apply_update(&mut head, &grads.head, lr);
    }

    Ok((params, head, trace))
}
