//! Property tests over randomly generated instances: the algebraic
//! guarantees each module promises regardless of input.

use hail_core::expand::ExpansionMap;
use hail_core::fusion::{fuse_forward, FeaturePair, FusionParams, Intensity, VisualTensor};
use hail_core::inference::{GammaSchedule, ModalityBalancer};
use hail_core::linalg::{
    cosine_similarity, kmeans, ridge_solve, stable_softmax, Matrix, RidgeConfig,
};
use hail_core::metrics::{Acc, AccuracyMatrix};
use num_rational::Ratio;
use proptest::prelude::*;

fn first_max(values: &[f64]) -> usize {
    let mut arg = 0;
    for i in 1..values.len() {
        if values[i] > values[arg] {
            arg = i;
        }
    }
    arg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_a_shift_invariant_distribution(
        v in prop::collection::vec(-30.0..30.0f64, 1..12),
        shift in -50.0..50.0f64,
    ) {
        let p = stable_softmax(&v).unwrap();
        prop_assert!(p.iter().all(|x| *x > 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert_eq!(first_max(&v), first_max(&p));

        let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
        let q = stable_softmax(&shifted).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_is_bounded_and_scale_invariant(
        u in prop::collection::vec(-5.0..5.0f64, 1..10),
        v_seed in prop::collection::vec(-5.0..5.0f64, 1..10),
        c in 0.1..10.0f64,
    ) {
        let n = u.len().min(v_seed.len());
        let (u, v) = (&u[..n], &v_seed[..n]);
        prop_assume!(u.iter().map(|x| x * x).sum::<f64>() > 1e-6);
        prop_assume!(v.iter().map(|x| x * x).sum::<f64>() > 1e-6);
        let cos = cosine_similarity(u, v).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&cos));
        let scaled: Vec<f64> = u.iter().map(|x| c * x).collect();
        let cos_scaled = cosine_similarity(&scaled, v).unwrap();
        prop_assert!((cos - cos_scaled).abs() < 1e-9);
    }

    #[test]
    fn ridge_solutions_satisfy_their_normal_equations(
        n in 1usize..20,
        d in 1usize..8,
        data_seed in any::<u64>(),
    ) {
        let f = hail_core::linalg::seeded_uniform_matrix(n, d, 2.0, data_seed);
        let y = hail_core::linalg::seeded_uniform_matrix(n, 4, 1.0, data_seed ^ 0xAA);
        let w = ridge_solve(&f, &y, RidgeConfig::default()).unwrap();

        // F^T F W + eta W should equal F^T Y.
        let lhs = f.gram().matmul(&w).unwrap().add(&w).unwrap();
        let rhs = f.transpose().matmul(&y).unwrap();
        let scale = rhs.max_abs().max(1.0);
        prop_assert!(lhs.sub(&rhs).unwrap().max_abs() / scale <= 1e-8);

        // Target columns are independent: block solve equals two half solves.
        let mut y1 = Matrix::zeros(n, 2);
        let mut y2 = Matrix::zeros(n, 2);
        for r in 0..n {
            for c in 0..2 {
                y1.set(r, c, y.get(r, c));
                y2.set(r, c, y.get(r, c + 2));
            }
        }
        let w1 = ridge_solve(&f, &y1, RidgeConfig::default()).unwrap();
        let w2 = ridge_solve(&f, &y2, RidgeConfig::default()).unwrap();
        for r in 0..d {
            for c in 0..2 {
                prop_assert_eq!(w.get(r, c), w1.get(r, c));
                prop_assert_eq!(w.get(r, c + 2), w2.get(r, c));
            }
        }
    }

    #[test]
    fn kmeans_inertia_never_rises_and_seeds_pin_the_result(
        n in 4usize..30,
        d in 1usize..5,
        k in 1usize..5,
        data_seed in any::<u64>(),
        kmeans_seed in any::<u64>(),
    ) {
        let points = hail_core::linalg::seeded_uniform_matrix(n, d, 3.0, data_seed);
        let k = k.min(n);
        let a = kmeans(&points, k, 15, kmeans_seed).unwrap();
        for pair in a.inertia_trace.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-9);
        }
        let b = kmeans(&points, k, 15, kmeans_seed).unwrap();
        prop_assert_eq!(a.centroids, b.centroids);
        prop_assert_eq!(a.assignments, b.assignments);
    }

    #[test]
    fn gamma_schedule_descends_with_exact_endpoints(
        raw_min in 0.0..1.0f64,
        raw_max in 0.0..1.0f64,
        k_total in 1usize..30,
    ) {
        let (lo, hi) = if raw_min <= raw_max { (raw_min, raw_max) } else { (raw_max, raw_min) };
        let sched = GammaSchedule::new(hi, lo, k_total).unwrap();
        prop_assert_eq!(sched.gamma_at(0).unwrap(), hi);
        prop_assert_eq!(sched.gamma_at(k_total).unwrap(), lo);
        let mut prev = f64::INFINITY;
        for k in 0..=k_total {
            let g = sched.gamma_at(k).unwrap();
            prop_assert!(g <= prev + 1e-15);
            prev = g;
        }
    }

    #[test]
    fn modality_weights_always_sum_to_one_exactly(
        da in 1usize..6,
        dv in 1usize..6,
        w_seed in any::<u64>(),
        f_seed in any::<u64>(),
    ) {
        let mut balancer = ModalityBalancer::new();
        let w = hail_core::linalg::seeded_uniform_matrix(Intensity::COUNT, da + dv, 2.0, w_seed);
        balancer.set_weights(7, w).unwrap();
        let f = hail_core::linalg::seeded_uniform_matrix(2, da + dv, 3.0, f_seed);
        let (f_a, f_v) = (&f.row(0)[..da], &f.row(0)[da..]);
        let (beta_a, beta_v) = balancer.beta_weights(7, f_a, f_v, true).unwrap();
        for (a, v) in beta_a.iter().zip(&beta_v) {
            prop_assert_eq!(a + v, 1.0);
            prop_assert!(*a > 0.0 && *a < 1.0);
        }
    }

    #[test]
    fn expansion_is_nonnegative_and_seed_deterministic(
        d in 1usize..6,
        ratio in 1usize..6,
        seed in any::<u64>(),
        input in prop::collection::vec(-4.0..4.0f64, 1..6),
    ) {
        let d = d.max(input.len());
        let mut padded = input.clone();
        padded.resize(d, 0.0);
        let map_a = ExpansionMap::new(d, d * ratio, seed).unwrap();
        let map_b = ExpansionMap::new(d, d * ratio, seed).unwrap();
        let out_a = map_a.expand(&padded).unwrap();
        let out_b = map_b.expand(&padded).unwrap();
        prop_assert_eq!(&out_a, &out_b);
        prop_assert!(out_a.iter().all(|x| *x >= 0.0));
        prop_assert_eq!(out_a.len(), d * ratio);
    }

    #[test]
    fn attention_weights_normalize_along_their_axes(
        d in 2usize..5,
        frames in 1usize..4,
        spatial in 1usize..4,
        data_seed in any::<u64>(),
        param_seed in any::<u64>(),
    ) {
        let audio = hail_core::linalg::seeded_uniform_matrix(1, d, 2.0, data_seed);
        let vis =
            hail_core::linalg::seeded_uniform_matrix(1, frames * spatial * d, 2.0, data_seed ^ 1);
        let visual = VisualTensor::from_vec(frames, spatial, d, vis.row(0).to_vec()).unwrap();
        let pair =
            FeaturePair::new(audio.row(0).to_vec(), visual, Intensity::Weak, 0).unwrap();
        let params = FusionParams::seeded(d, param_seed);
        let out = fuse_forward(&pair, &params).unwrap();

        for l in 0..frames {
            for c in 0..d {
                let s_sum: f64 = (0..spatial).map(|s| out.spatial_weights.get(l, s, c)).sum();
                prop_assert!((s_sum - 1.0).abs() < 1e-9);
            }
        }
        for c in 0..d {
            let l_sum: f64 = (0..frames).map(|l| out.temporal_weights.get(l, c)).sum();
            prop_assert!((l_sum - 1.0).abs() < 1e-9);
        }
        prop_assert!((out.audio_weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn metric_ranges_hold_on_random_rational_matrices(
        stages in 1usize..6,
        cells in prop::collection::vec((0i64..=100, 1i64..=100), 36),
    ) {
        let mut matrix = AccuracyMatrix::new();
        let mut idx = 0;
        for k in 1..=stages {
            let mut row: Vec<Acc> = Vec::new();
            for _ in 0..k {
                let (num, den) = cells[idx % cells.len()];
                idx += 1;
                row.push(Ratio::new(num.min(den), den));
            }
            matrix.push_row(row).unwrap();
        }
        for k in 1..=stages {
            let avg = matrix.avg_accuracy(k).unwrap();
            prop_assert!(avg >= Ratio::new(0, 1) && avg <= Ratio::new(1, 1));
        }
        for k in 2..=stages {
            let f = matrix.forgetting(k).unwrap();
            prop_assert!(f >= Ratio::new(-1, 1) && f <= Ratio::new(1, 1));
        }
    }
}
