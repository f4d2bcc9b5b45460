use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// k x d centroid matrix.
    pub centroids: Matrix,
    /// Cluster index per input row; ties broken toward the lowest centroid.
    pub assignments: Vec<usize>,
    /// Sum of squared distances of each point to its assigned centroid.
    pub inertia: f64,
    /// Lloyd iterations executed.
    pub iterations: usize,
    /// Inertia at the end of each iteration; non-increasing.
    pub inertia_trace: Vec<f64>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Seeded k-means over the rows of `points`. Centroids start from a
/// distance-weighted (k-means++ style) draw out of a ChaCha8 stream, so the
/// same seed always yields bit-identical output. Iteration stops when the
/// assignment vector repeats or `max_iter` is reached. A cluster left empty
/// after assignment steals the point farthest from its current centroid.
pub fn kmeans(points: &Matrix, k: usize, max_iter: usize, seed: u64) -> Result<KMeansResult> {
    let n = points.rows();
    let d = points.cols();
    if k == 0 || k > n {
        return Err(CoreError::InvalidArgument(format!(
            "kmeans needs 1 <= k <= n, got k={k} with n={n}"
        )));
    }
    if max_iter == 0 {
        return Err(CoreError::InvalidArgument("kmeans max_iter must be >= 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ style seeding: first centroid uniform, the rest proportional
    // to squared distance from the nearest chosen centroid.
    let mut centroids = Matrix::zeros(k, d);
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut best_d2: Vec<f64> = (0..n).map(|i| dist2(points.row(i), centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = best_d2.iter().sum();
        let idx = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, w) in best_d2.iter().enumerate() {
                acc += w;
                if acc >= target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All remaining mass is zero (duplicate points); any row works.
            rng.gen_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(points.row(idx));
        for i in 0..n {
            let nd = dist2(points.row(i), centroids.row(c));
            if nd < best_d2[i] {
                best_d2[i] = nd;
            }
        }
    }

    let mut assignments = vec![0usize; n];
    let mut inertia_trace = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;

        // Assignment step; ties go to the lowest centroid index.
        let mut changed = iterations == 1;
        for i in 0..n {
            let mut best = 0usize;
            let mut best_dist = f64::INFINITY;
            for c in 0..k {
                let dd = dist2(points.row(i), centroids.row(c));
                if dd < best_dist {
                    best_dist = dd;
                    best = c;
                }
            }
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }

        // Refill empty clusters with the globally farthest point, skipping
        // rows whose departure would empty another cluster.
        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let mut far_idx = None;
            let mut far_dist = -1.0;
            for i in 0..n {
                if counts[assignments[i]] <= 1 {
                    continue;
                }
                let dd = dist2(points.row(i), centroids.row(assignments[i]));
                if dd > far_dist {
                    far_dist = dd;
                    far_idx = Some(i);
                }
            }
            if let Some(i) = far_idx {
                counts[assignments[i]] -= 1;
                assignments[i] = c;
                counts[c] = 1;
                centroids.row_mut(c).copy_from_slice(points.row(i));
                changed = true;
            }
        }

        // Update step: centroid = mean of its members.
        let mut sums = Matrix::zeros(k, d);
        for i in 0..n {
            let c = assignments[i];
            let row = points.row(i);
            let srow = sums.row_mut(c);
            for (s, x) in srow.iter_mut().zip(row) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            for v in sums.row_mut(c) {
                *v *= inv;
            }
            centroids.row_mut(c).copy_from_slice(sums.row(c));
        }

        let inertia: f64 =
            (0..n).map(|i| dist2(points.row(i), centroids.row(assignments[i]))).sum();
        inertia_trace.push(inertia);

        if !changed {
            break;
        }
    }

    let inertia = *inertia_trace.last().expect("at least one iteration ran");
    Ok(KMeansResult { centroids, assignments, inertia, iterations, inertia_trace })
}
