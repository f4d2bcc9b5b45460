//! Analytic gradients of the fusion training loss. The chain runs backward
//! through the head, the two Tanh projections, the cosine penalty, and all
//! three attention softmaxes down to the scoring projections. Every formula
//! here is validated against central finite differences in the tests.

use crate::error::Result;
use crate::fusion::{FeaturePair, FusedOutput, FusionParams, Intensity};
use crate::linalg::{stable_softmax, Matrix};

/// Per-parameter gradients for one sample (or an accumulated batch).
#[derive(Debug, Clone)]
pub struct FusionGrads {
    pub w_audio: Matrix,
    pub w_visual: Matrix,
    pub u_audio: Matrix,
    pub u_visual: Matrix,
    pub head: Matrix,
}

impl FusionGrads {
    pub fn zeros(dim: usize) -> Self {
        FusionGrads {
            w_audio: Matrix::zeros(dim, dim),
            w_visual: Matrix::zeros(dim, dim),
            u_audio: Matrix::zeros(dim, dim),
            u_visual: Matrix::zeros(dim, dim),
            head: Matrix::zeros(dim, Intensity::COUNT),
        }
    }

    pub fn accumulate(&mut self, other: &FusionGrads, weight: f64) {
        let acc = |dst: &mut Matrix, src: &Matrix| {
            for r in 0..dst.rows() {
                for c in 0..dst.cols() {
                    dst.set(r, c, dst.get(r, c) + weight * src.get(r, c));
                }
            }
        };
        acc(&mut self.w_audio, &other.w_audio);
        acc(&mut self.w_visual, &other.w_visual);
        acc(&mut self.u_audio, &other.u_audio);
        acc(&mut self.u_visual, &other.u_visual);
        acc(&mut self.head, &other.head);
    }

    pub fn max_abs(&self) -> f64 {
        self.w_audio
            .max_abs()
            .max(self.w_visual.max_abs())
            .max(self.u_audio.max_abs())
            .max(self.u_visual.max_abs())
            .max(self.head.max_abs())
    }
}

/// Jacobian-vector product of a softmax: given the softmax output `p` and the
/// downstream gradient `dp`, returns the gradient w.r.t. the logits.
fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    p.iter().zip(dp).map(|(pi, di)| pi * (di - dot)).collect()
}

/// Gradients of `fusion_loss` w.r.t. every fusion parameter and the head, for
/// one sample. `out` must be the forward result for exactly this pair and
/// parameter set.
pub fn fusion_gradients(
    pair: &FeaturePair,
    params: &FusionParams,
    head: &Matrix,
    out: &FusedOutput,
    label: Intensity,
    lambda_sim: f64,
) -> Result<FusionGrads> {
    let d = pair.dim();
    let frames = pair.visual.frames();
    let spatial = pair.visual.spatial();
    let mut g = FusionGrads::zeros(d);

    // Cross-entropy head gradient: dlogits = softmax(logits) - onehot.
    let logits = head.vec_mul(&out.fused)?;
    let probs = stable_softmax(&logits)?;
    let mut dlogits = probs;
    dlogits[label.index()] -= 1.0;

    for i in 0..d {
        for c in 0..Intensity::COUNT {
            g.head.set(i, c, out.fused[i] * dlogits[c]);
        }
    }
    let mut dfused = vec![0.0; d];
    for i in 0..d {
        dfused[i] = (0..Intensity::COUNT).map(|c| head.get(i, c) * dlogits[c]).sum();
    }

    // fused = tanh(ev·Uv) + tanh(ea·Ua); recompute the Tanh outputs.
    let proj_v: Vec<f64> =
        params.u_visual.vec_mul(&out.enhanced_visual)?.into_iter().map(f64::tanh).collect();
    let proj_a: Vec<f64> =
        params.u_audio.vec_mul(&out.enhanced_audio)?.into_iter().map(f64::tanh).collect();
    let dproj_v: Vec<f64> =
        dfused.iter().zip(&proj_v).map(|(df, t)| df * (1.0 - t * t)).collect();
    let dproj_a: Vec<f64> =
        dfused.iter().zip(&proj_a).map(|(df, t)| df * (1.0 - t * t)).collect();

    for i in 0..d {
        for j in 0..d {
            g.u_visual.set(i, j, out.enhanced_visual[i] * dproj_v[j]);
            g.u_audio.set(i, j, out.enhanced_audio[i] * dproj_a[j]);
        }
    }

    let mut d_ev = vec![0.0; d];
    let mut d_ea = vec![0.0; d];
    for i in 0..d {
        d_ev[i] = (0..d).map(|j| params.u_visual.get(i, j) * dproj_v[j]).sum();
        d_ea[i] = (0..d).map(|j| params.u_audio.get(i, j) * dproj_a[j]).sum();
    }

    // Cosine penalty: d(1 - cos(u,v))/du = cos·u/|u|^2 - v/(|u||v|).
    // A zero-norm side pins sim_loss at the constant 1, contributing nothing.
    if lambda_sim > 0.0 {
        let nu: f64 = out.enhanced_visual.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv: f64 = out.enhanced_audio.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nu > 0.0 && nv > 0.0 {
            let dot: f64 =
                out.enhanced_visual.iter().zip(&out.enhanced_audio).map(|(a, b)| a * b).sum();
            let cos = dot / (nu * nv);
            for i in 0..d {
                d_ev[i] += lambda_sim
                    * (cos * out.enhanced_visual[i] / (nu * nu)
                        - out.enhanced_audio[i] / (nu * nv));
                d_ea[i] += lambda_sim
                    * (cos * out.enhanced_audio[i] / (nv * nv)
                        - out.enhanced_visual[i] / (nu * nv));
            }
        }
    }

    // Audio branch: ea = a ⊙ aw, aw = softmax(gate), gate_c = mean(sv)_c · sa_c.
    let d_aw: Vec<f64> = d_ea.iter().zip(&pair.audio).map(|(de, a)| de * a).collect();
    let d_gate = softmax_backward(&out.audio_weights, &d_aw);
    let inv_ls = 1.0 / (frames * spatial) as f64;
    let mut mean_sv = vec![0.0; d];
    for l in 0..frames {
        for s in 0..spatial {
            for (m, v) in mean_sv.iter_mut().zip(out.score_visual.loc(l, s)) {
                *m += v;
            }
        }
    }
    for m in &mut mean_sv {
        *m *= inv_ls;
    }

    let mut d_sa = vec![0.0; d];
    // Accumulates over the whole backward pass before the Tanh step.
    let mut d_sv = vec![0.0; frames * spatial * d];
    let sv_idx = |l: usize, s: usize, c: usize| (l * spatial + s) * d + c;

    for c in 0..d {
        d_sa[c] += d_gate[c] * mean_sv[c];
        let per_loc = d_gate[c] * out.score_audio[c] * inv_ls;
        for l in 0..frames {
            for s in 0..spatial {
                d_sv[sv_idx(l, s, c)] += per_loc;
            }
        }
    }

    // Visual branch: ev_c = sum_l tw[l,c] · inner[l,c],
    // inner[l,c] = sum_s V[l,s,c] · spa[l,s,c].
    let mut inner = Matrix::zeros(frames, d);
    for l in 0..frames {
        for c in 0..d {
            let v: f64 = (0..spatial)
                .map(|s| pair.visual.get(l, s, c) * out.spatial_weights.get(l, s, c))
                .sum();
            inner.set(l, c, v);
        }
    }

    let mut d_tw = Matrix::zeros(frames, d);
    let mut d_inner = Matrix::zeros(frames, d);
    for l in 0..frames {
        for c in 0..d {
            d_tw.set(l, c, d_ev[c] * inner.get(l, c));
            d_inner.set(l, c, d_ev[c] * out.temporal_weights.get(l, c));
        }
    }

    // Temporal softmax runs over frames independently per channel.
    let mut d_fs = Matrix::zeros(frames, d);
    for c in 0..d {
        let p: Vec<f64> = (0..frames).map(|l| out.temporal_weights.get(l, c)).collect();
        let dp: Vec<f64> = (0..frames).map(|l| d_tw.get(l, c)).collect();
        let dl = softmax_backward(&p, &dp);
        for l in 0..frames {
            d_fs.set(l, c, dl[l]);
        }
    }

    // spa receives gradient from both the raw-feature pooling (inner) and the
    // score pooling (frame_scores); sv receives the frame_scores share here.
    let mut d_spa = vec![0.0; frames * spatial * d];
    for l in 0..frames {
        for s in 0..spatial {
            for c in 0..d {
                let i = sv_idx(l, s, c);
                d_spa[i] += d_inner.get(l, c) * pair.visual.get(l, s, c);
                d_spa[i] += d_fs.get(l, c) * out.score_visual.get(l, s, c);
                d_sv[i] += d_fs.get(l, c) * out.spatial_weights.get(l, s, c);
            }
        }
    }

    // Spatial softmax runs over positions independently per (frame, channel);
    // its logits are sa_c · sv[l,s,c].
    for l in 0..frames {
        for c in 0..d {
            let p: Vec<f64> = (0..spatial).map(|s| out.spatial_weights.get(l, s, c)).collect();
            let dp: Vec<f64> = (0..spatial).map(|s| d_spa[sv_idx(l, s, c)]).collect();
            let dlogit = softmax_backward(&p, &dp);
            for s in 0..spatial {
                d_sa[c] += dlogit[s] * out.score_visual.get(l, s, c);
                d_sv[sv_idx(l, s, c)] += dlogit[s] * out.score_audio[c];
            }
        }
    }

    // Tanh backward into the scoring projections.
    for l in 0..frames {
        for s in 0..spatial {
            let raw = pair.visual.loc(l, s);
            for c in 0..d {
                let sv = out.score_visual.get(l, s, c);
                let dpre = d_sv[sv_idx(l, s, c)] * (1.0 - sv * sv);
                if dpre == 0.0 {
                    continue;
                }
                for i in 0..d {
                    g.w_visual.set(i, c, g.w_visual.get(i, c) + raw[i] * dpre);
                }
            }
        }
    }
    for c in 0..d {
        let sa = out.score_audio[c];
        let dpre = d_sa[c] * (1.0 - sa * sa);
        for i in 0..d {
            g.w_audio.set(i, c, pair.audio[i] * dpre);
        }
    }

    Ok(g)
}
