use crate::error::{CoreError, Result};

/// Softmax with the max subtracted before exponentiation, so large inputs
/// cannot overflow. Output entries sum to 1 up to rounding and are strictly
/// positive unless an input sits more than ~745 below the max, where the
/// exponential correctly rounds to zero.
pub fn stable_softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(CoreError::InvalidArgument("softmax of empty slice".into()));
    }
    if !v.iter().all(|x| x.is_finite()) {
        return Err(CoreError::NonFinite("softmax input".into()));
    }
    let max = v.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Cosine of the angle between two equal-length vectors, clamped to [-1, 1].
/// A zero-norm operand is rejected; callers that want a neutral value on
/// degenerate input handle that error themselves.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(CoreError::DimensionMismatch(format!(
            "cosine of lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    if u.is_empty() {
        return Err(CoreError::InvalidArgument("cosine of empty vectors".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(CoreError::ZeroNorm("cosine similarity".into()));
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}
