use crate::error::{CoreError, Result};
use crate::linalg::Matrix;

/// Ridge regularization strength. Must be strictly positive so the normal
/// equations stay positive definite regardless of feature rank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeConfig {
    pub eta: f64,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        RidgeConfig { eta: 1.0 }
    }
}

/// Solves A·X = B for symmetric positive definite A via an in-place Cholesky
/// factorization A = L·Lᵀ. Columns of B are solved independently, so solving
/// [B1 | B2] jointly is bitwise identical to solving each block alone.
pub fn solve_spd(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(CoreError::DimensionMismatch("solve_spd needs square A".into()));
    }
    if b.rows() != n {
        return Err(CoreError::DimensionMismatch("solve_spd RHS rows".into()));
    }

    // Lower-triangular factor, row-major.
    let mut l = vec![0.0_f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(CoreError::SolverFailure(format!(
                        "non-positive pivot {s:e} at row {i}; matrix is not positive definite"
                    )));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }

    let m = b.cols();
    let mut x = Matrix::zeros(n, m);
    for c in 0..m {
        // Forward substitution L·y = b.
        let mut y = vec![0.0_f64; n];
        for i in 0..n {
            let mut s = b.get(i, c);
            for k in 0..i {
                s -= l[i * n + k] * y[k];
            }
            y[i] = s / l[i * n + i];
        }
        // Back substitution Lᵀ·x = y.
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[k * n + i] * x.get(k, c);
            }
            x.set(i, c, s / l[i * n + i]);
        }
    }
    Ok(x)
}

/// Closed-form ridge regression: returns the W minimizing
/// ‖Y − F·W‖² + eta·‖W‖², i.e. W = (FᵀF + eta·I)⁻¹FᵀY, computed without
/// forming the inverse.
pub fn ridge_solve(features: &Matrix, targets: &Matrix, cfg: RidgeConfig) -> Result<Matrix> {
    if features.rows() != targets.rows() {
        return Err(CoreError::DimensionMismatch(format!(
            "ridge: {} feature rows vs {} target rows",
            features.rows(),
            targets.rows()
        )));
    }
    if !cfg.eta.is_finite() || cfg.eta <= 0.0 {
        return Err(CoreError::InvalidArgument(format!(
            "ridge eta must be positive and finite, got {}",
            cfg.eta
        )));
    }
    if !features.is_finite() || !targets.is_finite() {
        return Err(CoreError::NonFinite("ridge inputs".into()));
    }

    let d = features.cols();
    let mut gram = features.gram();
    for i in 0..d {
        gram.set(i, i, gram.get(i, i) + cfg.eta);
    }
    let rhs = features.transpose().matmul(targets)?;
    solve_spd(&gram, &rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_hand_checked_system() {
        // A = [[4,2],[2,3]] is SPD; b = [8, 7] -> x = [1.25, 1.5].
        let a = Matrix::from_vec(2, 2, vec![4.0, 2.0, 2.0, 3.0]).unwrap();
        let b = Matrix::from_vec(2, 1, vec![8.0, 7.0]).unwrap();
        let x = solve_spd(&a, &b).unwrap();
        assert!((x.get(0, 0) - 1.25).abs() < 1e-12);
        assert!((x.get(1, 0) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite_matrix() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        let b = Matrix::from_vec(2, 1, vec![1.0, 1.0]).unwrap();
        assert!(matches!(solve_spd(&a, &b), Err(CoreError::SolverFailure(_))));
    }

    #[test]
    fn singular_features_still_solve_under_regularization() {
        // Two identical columns: FᵀF is singular, FᵀF + eta·I is not.
        let f = Matrix::from_vec(3, 2, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]).unwrap();
        let y = Matrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let w = ridge_solve(&f, &y, RidgeConfig { eta: 1.0 }).unwrap();
        assert!(w.is_finite());
        // Symmetry of the duplicated columns carries into the solution.
        assert!((w.get(0, 0) - w.get(1, 0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_eta_and_shape() {
        let f = Matrix::zeros(3, 2);
        let y = Matrix::zeros(3, 1);
        assert!(ridge_solve(&f, &y, RidgeConfig { eta: 0.0 }).is_err());
        assert!(ridge_solve(&f, &y, RidgeConfig { eta: -1.0 }).is_err());
        let y_bad = Matrix::zeros(4, 1);
        assert!(ridge_solve(&f, &y_bad, RidgeConfig::default()).is_err());
    }

    #[test]
    fn eta_scales_solution_toward_zero() {
        let f = Matrix::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = Matrix::from_vec(4, 1, vec![2.0, 4.0, 6.0, 8.0]).unwrap();
        let w_small = ridge_solve(&f, &y, RidgeConfig { eta: 1e-9 }).unwrap();
        let w_big = ridge_solve(&f, &y, RidgeConfig { eta: 1e6 }).unwrap();
        assert!((w_small.get(0, 0) - 2.0).abs() < 1e-6);
        assert!(w_big.get(0, 0).abs() < 1e-3);
    }
}
