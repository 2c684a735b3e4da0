use hint_core::numerics::{finite_diff, max_relative_error, Axis, Graph, Tensor};
use hint_core::scoring::{
    incremental_similarity, pair_score, pair_score_var, relevance_profile, score_matrix, Reduction,
    ScoringConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// k×Q similarity with explicit loops; `row_axis` normalizes each query row
/// over target channels, otherwise each target column over the k queries.
fn naive_similarity(u: &Tensor, f: &Tensor, k: usize, row_axis: bool) -> Vec<Vec<f64>> {
    let q = u.rows();
    let logits: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..q).map(|j| dot(u.row(i), f.row(j))).collect())
        .collect();
    let mut out = vec![vec![0.0; q]; k];
    if row_axis {
        for i in 0..k {
            let m = logits[i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits[i].iter().map(|x| (x - m).exp()).sum();
            for j in 0..q {
                out[i][j] = (logits[i][j] - m).exp() / z;
            }
        }
    } else {
        for j in 0..q {
            let m = (0..k)
                .map(|i| logits[i][j])
                .fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..k).map(|i| (logits[i][j] - m).exp()).sum();
            for i in 0..k {
                out[i][j] = (logits[i][j] - m).exp() / z;
            }
        }
    }
    out
}

/// Per-level means and their average, straight from the definition.
fn naive_profile(u: &Tensor, f: &Tensor, row_axis: bool) -> (Vec<Vec<f64>>, Vec<f64>) {
    let q = u.rows();
    let mut levels = Vec::new();
    for k in 1..=q {
        let s = naive_similarity(u, f, k, row_axis);
        levels.push(
            (0..q)
                .map(|j| (0..k).map(|i| s[i][j]).sum::<f64>() / k as f64)
                .collect::<Vec<_>>(),
        );
    }
    let s_u = (0..q)
        .map(|j| levels.iter().map(|l| l[j]).sum::<f64>() / q as f64)
        .collect();
    (levels, s_u)
}

fn random_pair(rng: &mut ChaCha8Rng, q: usize, d: usize, std: f64) -> (Tensor, Tensor) {
    (Tensor::randn(q, d, std, rng), Tensor::randn(q, d, std, rng))
}

fn cfg_axis(axis: Axis) -> ScoringConfig {
    ScoringConfig {
        axis,
        ..Default::default()
    }
}

#[test]
fn incremental_similarity_matches_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..50 {
        let q = rng.random_range(1..=6);
        let d = rng.random_range(1..=8);
        let (u, f) = random_pair(&mut rng, q, d, 1.0);
        for (axis, row) in [(Axis::Row, true), (Axis::Col, false)] {
            for k in 1..=q {
                let mut g = Graph::new();
                let (uv, fv) = (g.constant(u.clone()), g.constant(f.clone()));
                let s = incremental_similarity(&mut g, uv, fv, k, axis).unwrap();
                let expect = naive_similarity(&u, &f, k, row);
                for (i, r) in expect.iter().enumerate() {
                    for (j, v) in r.iter().enumerate() {
                        assert!((g.value(s).get(i, j) - v).abs() < 1e-12);
                    }
                }
            }
        }
    }
}

#[test]
fn incremental_similarity_rejects_bad_k() {
    let (u, f) = random_pair(&mut ChaCha8Rng::seed_from_u64(1), 3, 4, 1.0);
    let mut g = Graph::new();
    let (uv, fv) = (g.constant(u), g.constant(f));
    assert!(incremental_similarity(&mut g, uv, fv, 0, Axis::Row).is_err());
    assert!(incremental_similarity(&mut g, uv, fv, 4, Axis::Row).is_err());
}

#[test]
fn relevance_profile_and_score_match_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..50 {
        let q = rng.random_range(1..=6);
        let d = rng.random_range(1..=8);
        let (u, f) = random_pair(&mut rng, q, d, 1.0);
        for (axis, row) in [(Axis::Row, true), (Axis::Col, false)] {
            let cfg = cfg_axis(axis);
            let got = relevance_profile(&u, &f, &cfg).unwrap();
            let (levels, s_u) = naive_profile(&u, &f, row);
            for (a, b) in got.per_level.iter().flatten().zip(levels.iter().flatten()) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in got.s_u.iter().zip(&s_u) {
                assert!((a - b).abs() < 1e-12);
            }
            let max = s_u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!((pair_score(&u, &f, &cfg).unwrap() - max).abs() < 1e-12);
            let lse = cfg_lse(axis);
            let expect = s_u.iter().map(|x| x.exp()).sum::<f64>().ln();
            assert!((pair_score(&u, &f, &lse).unwrap() - expect).abs() < 1e-12);
        }
    }
}

fn cfg_lse(axis: Axis) -> ScoringConfig {
    ScoringConfig {
        axis,
        reduction: Reduction::LogSumExp,
        ..Default::default()
    }
}

#[test]
fn column_axis_levels_are_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let (u, f) = random_pair(&mut rng, 5, 6, 2.0);
    let p = relevance_profile(&u, &f, &cfg_axis(Axis::Col)).unwrap();
    for (k, level) in p.per_level.iter().enumerate() {
        for v in level {
            assert!((v - 1.0 / (k + 1) as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn single_channel_equals_full_profile_when_q_is_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for _ in 0..10 {
        let (u, f) = random_pair(&mut rng, 1, 5, 1.0);
        let full = ScoringConfig::default();
        let single = ScoringConfig {
            multi_channel: false,
            ..full.clone()
        };
        assert_eq!(
            relevance_profile(&u, &f, &full).unwrap().s_u,
            relevance_profile(&u, &f, &single).unwrap().s_u
        );
        assert_eq!(
            pair_score(&u, &f, &full).unwrap(),
            pair_score(&u, &f, &single).unwrap()
        );
    }
}

#[test]
fn score_matrix_equals_pairwise_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let queries: Vec<Tensor> = (0..4).map(|_| Tensor::randn(3, 5, 1.0, &mut rng)).collect();
    let targets: Vec<Tensor> = (0..6).map(|_| Tensor::randn(3, 5, 1.0, &mut rng)).collect();
    for cfg in [
        ScoringConfig::default(),
        cfg_lse(Axis::Row),
        ScoringConfig {
            qcr: false,
            ..Default::default()
        },
        ScoringConfig {
            multi_channel: false,
            ..Default::default()
        },
    ] {
        let m = score_matrix(&queries, &targets, &cfg).unwrap();
        assert_eq!((m.rows(), m.cols()), (4, 6));
        for (i, q) in queries.iter().enumerate() {
            for (j, t) in targets.iter().enumerate() {
                assert!((m.get(i, j) - pair_score(q, t, &cfg).unwrap()).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn cosine_fallback_matches_formula() {
    let u = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 2.0]]).unwrap();
    let f = Tensor::from_rows(&[vec![0.0, 1.0], vec![2.0, 1.0]]).unwrap();
    // pooled (1, 1) and (1, 1)
    let cfg = ScoringConfig {
        qcr: false,
        ..Default::default()
    };
    assert!((pair_score(&u, &f, &cfg).unwrap() - 1.0).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mean_of_s_u_is_one_over_q(seed in any::<u64>(), q in 1usize..9, d in 1usize..9, std in 0.1f64..5.0) {
        let (u, f) = random_pair(&mut ChaCha8Rng::seed_from_u64(seed), q, d, std);
        let p = relevance_profile(&u, &f, &ScoringConfig::default()).unwrap();
        let mean = p.s_u.iter().sum::<f64>() / q as f64;
        prop_assert!((mean - 1.0 / q as f64).abs() < 1e-12);
    }

    #[test]
    fn max_score_lies_in_bounds(seed in any::<u64>(), q in 1usize..9, d in 1usize..9, std in 0.1f64..5.0) {
        let (u, f) = random_pair(&mut ChaCha8Rng::seed_from_u64(seed), q, d, std);
        let s = pair_score(&u, &f, &ScoringConfig::default()).unwrap();
        prop_assert!(s >= 1.0 / q as f64 - 1e-12 && s <= 1.0 + 1e-12);
    }

    /// Translating every target channel by the same vector shifts each
    /// logit row by a constant, which a row softmax ignores.
    #[test]
    fn row_softmax_ignores_common_target_shift(seed in any::<u64>(), q in 1usize..7, d in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (u, f) = random_pair(&mut rng, q, d, 1.0);
        let c: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let shifted = Tensor::from_rows(
            &(0..q).map(|r| f.row(r).iter().zip(&c).map(|(x, y)| x + y).collect()).collect::<Vec<_>>(),
        ).unwrap();
        let cfg = ScoringConfig::default();
        let a = relevance_profile(&u, &f, &cfg).unwrap().s_u;
        let b = relevance_profile(&u, &shifted, &cfg).unwrap().s_u;
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn pair_score_gradient_matches_finite_differences(seed in any::<u64>(), q in 2usize..6, d in 2usize..6) {
        let (u, f) = random_pair(&mut ChaCha8Rng::seed_from_u64(seed), q, d, 0.7);
        let cfg = ScoringConfig::default();
        let mut s_u = relevance_profile(&u, &f, &cfg).unwrap().s_u;
        s_u.sort_by(|a, b| b.total_cmp(a));
        prop_assume!(s_u[0] - s_u[1] > 1e-3);

        let mut g = Graph::new();
        let (uv, fv) = (g.param(u.clone()), g.param(f.clone()));
        let s = pair_score_var(&mut g, uv, fv, &cfg).unwrap();
        g.backward(s).unwrap();
        let mut analytic = g.grad(uv).unwrap().data().to_vec();
        analytic.extend_from_slice(g.grad(fv).unwrap().data());

        let n = u.len();
        let mut flat = u.data().to_vec();
        flat.extend_from_slice(f.data());
        let numeric = finite_diff(
            |x| {
                let a = Tensor::matrix(q, d, x[..n].to_vec()).unwrap();
                let b = Tensor::matrix(q, d, x[n..].to_vec()).unwrap();
                pair_score(&a, &b, &cfg).unwrap()
            },
            &flat,
            1e-5,
        );
        prop_assert!(max_relative_error(&analytic, &numeric, 1e-5) < 1e-4);
    }
}

#[test]
fn shape_mismatch_is_an_error() {
    let u = Tensor::zeros(3, 4);
    let f = Tensor::zeros(2, 4);
    assert!(pair_score(&u, &f, &ScoringConfig::default()).is_err());
    assert!(relevance_profile(&u, &Tensor::zeros(3, 5), &ScoringConfig::default()).is_err());
}
