use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hint_core::encoders::HintParams;
use hint_core::harness::{
    evaluate, generate_synthetic, load_params, params_from_json, params_to_json, save_params,
    train, FeatureStore, RunConfig, SyntheticSpec, Triplet,
};
use hint_core::numerics::Tensor;
use hint_core::FormatError;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_store(rng: &mut ChaCha8Rng, n: usize, q: usize, l: usize, d: usize) -> FeatureStore {
    let mut store = FeatureStore::new(q, l, d).unwrap();
    let mut draw =
        |len: usize| -> Vec<f32> { (0..len).map(|_| rng.random_range(-3.0f32..3.0)).collect() };
    for _ in 0..n {
        store
            .push(Triplet {
                reference: draw(q * d),
                text: draw(l * d),
                target: draw(q * d),
            })
            .unwrap();
    }
    store
}

fn synth(n: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n,
        queries: 4,
        text_len: 3,
        dim: 8,
        noise_sigma: 0.05,
        seed,
        ..Default::default()
    }
}

// ---------------------------------------------------------------- HFT1

#[test]
fn hft1_byte_accounting() {
    let mut store = FeatureStore::new(1, 1, 1).unwrap();
    store
        .push(Triplet {
            reference: vec![1.0],
            text: vec![1.0],
            target: vec![1.0],
        })
        .unwrap();
    let bytes = store.to_bytes();
    assert_eq!(bytes.len(), 4 + 16 + 12);
    assert_eq!(&bytes[..4], b"HFT1");
    assert_eq!(
        &bytes[4..20],
        &[1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]
    );
    assert_eq!(&bytes[20..24], &1.0f32.to_le_bytes());

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = random_store(&mut rng, 5, 3, 2, 4);
    assert_eq!(s.to_bytes().len(), 20 + 5 * (3 * 4 + 2 * 4 + 3 * 4) * 4);
}

#[test]
fn hft1_field_order_is_reference_text_target() {
    let mut store = FeatureStore::new(1, 2, 2).unwrap();
    store
        .push(Triplet {
            reference: vec![1.0, 2.0],
            text: vec![3.0, 4.0, 5.0, 6.0],
            target: vec![7.0, 8.0],
        })
        .unwrap();
    let floats: Vec<f32> = store.to_bytes()[20..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    assert_eq!(floats, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
    assert_eq!(store.text(0).row(1), &[5.0, 6.0]);
}

#[test]
fn hft1_errors_are_distinct() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let good = random_store(&mut rng, 2, 2, 2, 2).to_bytes();

    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    assert!(matches!(
        FeatureStore::from_bytes(&bad_magic),
        Err(FormatError::BadMagic(_))
    ));

    assert!(matches!(
        FeatureStore::from_bytes(&good[..good.len() - 1]),
        Err(FormatError::Truncated { .. })
    ));
    assert!(matches!(
        FeatureStore::from_bytes(&good[..10]),
        Err(FormatError::Truncated { .. })
    ));

    let mut overflow = good[..20].to_vec();
    for b in &mut overflow[4..20] {
        *b = 0xff;
    }
    assert!(matches!(
        FeatureStore::from_bytes(&overflow),
        Err(FormatError::DimOverflow { .. })
    ));

    let mut extra = good.clone();
    extra.push(0);
    assert!(matches!(
        FeatureStore::from_bytes(&extra),
        Err(FormatError::TrailingBytes { extra: 1 })
    ));

    let mut zero = good.clone();
    zero[8..12].copy_from_slice(&0u32.to_le_bytes());
    assert!(matches!(
        FeatureStore::from_bytes(&zero),
        Err(FormatError::ZeroDim { .. })
    ));

    let mut nan = good.clone();
    nan[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(
        FeatureStore::from_bytes(&nan),
        Err(FormatError::NonFinite { item: 0 })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hft1_round_trip_is_exact(seed in any::<u64>(), n in 0usize..6, q in 1usize..5, l in 1usize..5, d in 1usize..6) {
        let store = random_store(&mut ChaCha8Rng::seed_from_u64(seed), n, q, l, d);
        let bytes = store.to_bytes();
        prop_assert_eq!(bytes.len(), 20 + n * (2 * q + l) * d * 4);
        let back = FeatureStore::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(&back, &store);
    }
}

#[test]
fn hft1_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.hft");
    let store = generate_synthetic(&synth(7, 3)).unwrap();
    store.write(&path).unwrap();
    assert_eq!(FeatureStore::read(&path).unwrap(), store);
    assert!(FeatureStore::read(dir.path().join("missing.hft")).is_err());
}

// ---------------------------------------------------------------- synthetic data

#[test]
fn synthetic_generation_is_deterministic() {
    let a = generate_synthetic(&synth(10, 4)).unwrap();
    assert_eq!(
        a.to_bytes(),
        generate_synthetic(&synth(10, 4)).unwrap().to_bytes()
    );
    assert_ne!(
        a.to_bytes(),
        generate_synthetic(&synth(10, 5)).unwrap().to_bytes()
    );
}

#[test]
fn without_noise_or_edit_targets_are_unit_latents() {
    let s = generate_synthetic(&SyntheticSpec {
        noise_sigma: 0.0,
        edit_scale: 0.0,
        ..synth(6, 9)
    })
    .unwrap();
    for i in 0..s.len() {
        let t = s.target(i);
        let r = s.reference(i);
        let norm: f64 = t.row(0).iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        let mean_ref: Vec<f64> = (0..s.dim())
            .map(|c| (0..s.queries()).map(|q| r.get(q, c)).sum::<f64>() / s.queries() as f64)
            .collect();
        let ref_norm = mean_ref.iter().map(|x| x * x).sum::<f64>().sqrt();
        for q in 0..s.queries() {
            assert_eq!(t.row(q), t.row(0));
        }
        // references scatter with sd 0.1 around the same latent
        let cos: f64 = mean_ref
            .iter()
            .zip(t.row(0))
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / ref_norm;
        assert!(cos > 0.9, "cos {cos}");
    }
}

// ---------------------------------------------------------------- training

#[test]
fn zero_steps_keep_initialization() {
    let store = generate_synthetic(&synth(6, 0)).unwrap();
    let cfg = RunConfig {
        steps: 0,
        seed: 11,
        ..RunConfig::tiny()
    };
    let out = train(&store, &cfg).unwrap();
    let init = HintParams::init(&cfg.encoder(), &mut ChaCha8Rng::seed_from_u64(11));
    assert_eq!(out.params, init);
    assert!(out.trace.is_empty());
}

#[test]
fn training_is_deterministic() {
    let store = generate_synthetic(&synth(9, 2)).unwrap();
    let cfg = RunConfig {
        steps: 15,
        lr: 1e-3,
        ..RunConfig::tiny()
    };
    let a = train(&store, &cfg).unwrap();
    let b = train(&store, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.trace, b.trace);
    assert_eq!(params_to_json(&a.params), params_to_json(&b.params));
}

#[test]
fn zero_lambda_equals_disabled_context_loss() {
    let store = generate_synthetic(&synth(9, 3)).unwrap();
    let base = RunConfig {
        steps: 10,
        lr: 1e-3,
        ..RunConfig::tiny()
    };
    let a = train(
        &store,
        &RunConfig {
            lambda: 0.0,
            ..base.clone()
        },
    )
    .unwrap();
    let b = train(
        &store,
        &RunConfig {
            context_loss: false,
            ..base
        },
    )
    .unwrap();
    assert_eq!(a.params, b.params);
    let totals =
        |t: &[hint_core::objective::LossBreakdown]| t.iter().map(|b| b.total).collect::<Vec<_>>();
    assert_eq!(totals(&a.trace), totals(&b.trace));
}

/// Overfitting one fixed batch (N = B = 3) at the default learning rate.
#[test]
fn overfit_moving_average_decreases() {
    for seed in 0..4 {
        let store = generate_synthetic(&synth(3, seed)).unwrap();
        let cfg = RunConfig {
            steps: 200,
            seed,
            ..RunConfig::tiny()
        };
        let trace = train(&store, &cfg).unwrap().trace;
        assert!(trace.iter().all(|b| b.total.is_finite()));
        let totals: Vec<f64> = trace.iter().map(|b| b.total).collect();
        let ma: Vec<f64> = totals
            .windows(20)
            .map(|w| w.iter().sum::<f64>() / 20.0)
            .collect();
        for (i, w) in ma.windows(2).enumerate() {
            assert!(
                w[1] < w[0],
                "seed {seed}: moving average rises at window {}",
                i + 1
            );
        }
    }
}

#[test]
fn params_json_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::tiny();
    let p = HintParams::init(&cfg.encoder(), &mut ChaCha8Rng::seed_from_u64(5)).map(|t| {
        Tensor::randn(
            t.rows(),
            t.cols(),
            1.0,
            &mut ChaCha8Rng::seed_from_u64(t.len() as u64),
        )
    });
    let path = dir.path().join("p.json");
    save_params(&p, &path).unwrap();
    assert_eq!(load_params(&path, &cfg.encoder()).unwrap(), p);
    assert_eq!(
        params_from_json(&params_to_json(&p), &cfg.encoder()).unwrap(),
        p
    );
    let wrong = RunConfig { dim: 6, ..cfg };
    assert!(load_params(&path, &wrong.encoder()).is_err());
}

// ---------------------------------------------------------------- evaluation

#[test]
fn random_model_recall_at_one_is_chance() {
    // independent random triplets: nothing links a query to its target
    let g = 20;
    let seeds = 30;
    for qcr in [true, false] {
        let mut hits = 0.0;
        for seed in 0..seeds {
            let store = random_store(&mut ChaCha8Rng::seed_from_u64(1000 + seed), g, 4, 3, 8);
            let cfg = RunConfig {
                seed,
                qcr,
                init_std: 0.5,
                ..RunConfig::tiny()
            };
            let p = HintParams::init(&cfg.encoder(), &mut ChaCha8Rng::seed_from_u64(seed));
            hits += evaluate(&store, &p, &cfg).unwrap().recall_at[&1] * g as f64;
        }
        let trials = (g as u64 * seeds) as f64;
        let p = 1.0 / g as f64;
        let mean = hits / trials;
        let sigma = (p * (1.0 - p) / trials).sqrt();
        assert!(
            (mean - p).abs() < 3.0 * sigma,
            "qcr={qcr}: R@1 {mean} vs {p} ± {sigma}"
        );
    }
}

#[test]
fn single_item_gallery_recalls_everything() {
    let store = generate_synthetic(&synth(1, 0)).unwrap();
    let cfg = RunConfig::tiny();
    let p = HintParams::init(&cfg.encoder(), &mut ChaCha8Rng::seed_from_u64(0));
    let r = evaluate(&store, &p, &cfg).unwrap();
    assert!(r
        .recall_at
        .values()
        .chain(r.subset_recall_at.values())
        .all(|&v| v == 1.0));
}

#[test]
fn evaluate_is_pure_and_honors_qcr() {
    let store = generate_synthetic(&synth(12, 6)).unwrap();
    let cfg = RunConfig {
        steps: 30,
        lr: 1e-3,
        ..RunConfig::tiny()
    };
    let p = train(&store, &cfg).unwrap().params;
    let a = evaluate(&store, &p, &cfg).unwrap();
    assert_eq!(a, evaluate(&store, &p, &cfg).unwrap());
    assert!(a.is_monotone());
    let cosine = evaluate(
        &store,
        &p,
        &RunConfig {
            qcr: false,
            ..cfg.clone()
        },
    )
    .unwrap();
    assert_ne!(a, cosine);
    // training-only keys do not affect evaluation
    let b = evaluate(
        &store,
        &p,
        &RunConfig {
            lr: 0.5,
            steps: 0,
            ..cfg
        },
    )
    .unwrap();
    assert_eq!(a, b);
}

// ---------------------------------------------------------------- CLI

fn hint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hint"))
        .args(args)
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen_train_eval(dir: &Path, extra_train: &[&str]) -> (PathBuf, PathBuf, PathBuf) {
    let data = dir.join("data.hft");
    let params = dir.join("params.json");
    let report = dir.join("report.txt");
    let out = hint(&["gen", "--n", "16", "--seed", "3", "--out", p(&data)]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let mut args = vec!["train", "--data", p(&data), "--out-params", p(&params)];
    args.extend_from_slice(extra_train);
    let out = hint(&args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = hint(&[
        "eval",
        "--data",
        p(&data),
        "--params",
        p(&params),
        "--report",
        p(&report),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    (data, params, report)
}

#[test]
fn cli_smoke_path() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.hft");
    let params = dir.path().join("params.json");
    let report = dir.path().join("report.txt");
    let trace = dir.path().join("trace.csv");
    assert_eq!(hint(&["gen", "--out", p(&data)]).status.code(), Some(0));
    let out = hint(&[
        "train",
        "--data",
        p(&data),
        "--out-params",
        p(&params),
        "--trace",
        p(&trace),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = hint(&[
        "eval",
        "--data",
        p(&data),
        "--params",
        p(&params),
        "--report",
        p(&report),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let text = std::fs::read_to_string(&report).unwrap();
    for key in [
        "R@1=", "R@5=", "R@10=", "R@50=", "Rs@1=", "Rs@2=", "Rs@3=", "Avg=",
    ] {
        assert!(text.contains(key), "missing {key} in {text}");
    }
    let trace = std::fs::read_to_string(&trace).unwrap();
    assert!(trace.starts_with("step,l_rank,l_context,lambda,total\n"));
    assert_eq!(trace.lines().count(), 201);

    let out = hint(&[
        "score",
        "--data",
        p(&data),
        "--params",
        p(&params),
        "--i",
        "0",
        "--j",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("pair_score=") && stdout.contains("cosine="));
}

#[test]
fn cli_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let flags = ["--steps", "20", "--lr", "1e-3"];
    let (_, pa, ra) = gen_train_eval(a.path(), &flags);
    let (_, pb, rb) = gen_train_eval(b.path(), &flags);
    assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
    assert_eq!(std::fs::read(ra).unwrap(), std::fs::read(rb).unwrap());
}

#[test]
fn cli_error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (data, params, _) = gen_train_eval(dir.path(), &["--steps", "1"]);
    let missing = dir.path().join("nope.json");

    let out = hint(&["eval", "--data", p(&data), "--params", p(&missing)]);
    assert_eq!(out.status.code(), Some(2));

    let out = hint(&["eval", "--data", p(&missing), "--params", p(&params)]);
    assert_eq!(out.status.code(), Some(2));

    let out = hint(&[
        "train",
        "--data",
        p(&data),
        "--out-params",
        p(&params),
        "--bogus",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--bogus"));

    let out = hint(&[
        "eval",
        "--data",
        p(&data),
        "--params",
        p(&params),
        "--set",
        "nonsense=1",
    ]);
    assert_eq!(out.status.code(), Some(1));

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "lambda = -1\n").unwrap();
    let out = hint(&[
        "train",
        "--data",
        p(&data),
        "--out-params",
        p(&params),
        "--config",
        p(&cfg),
    ]);
    assert_eq!(out.status.code(), Some(1));

    let garbage = dir.path().join("garbage.hft");
    std::fs::write(&garbage, b"NOPE0000").unwrap();
    let out = hint(&["train", "--data", p(&garbage), "--out-params", p(&params)]);
    assert_eq!(out.status.code(), Some(2));

    assert_eq!(hint(&[]).status.code(), Some(1));
    assert_eq!(hint(&["--help"]).status.code(), Some(0));
}

#[test]
fn cli_config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.hft");
    assert_eq!(
        hint(&[
            "gen",
            "--n",
            "8",
            "--q",
            "4",
            "--l",
            "3",
            "--d",
            "8",
            "--out",
            p(&data)
        ])
        .status
        .code(),
        Some(0)
    );
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "# tiny run\nsteps = 3\nbatch = 4\nheads = 2\nlr = 1e-3\n",
    )
    .unwrap();
    let trace = dir.path().join("t.csv");
    let params = dir.path().join("p.json");
    let run = |extra: &[&str]| {
        let mut args = vec![
            "train",
            "--data",
            p(&data),
            "--out-params",
            p(&params),
            "--config",
            p(&cfg),
            "--trace",
            p(&trace),
        ];
        args.extend_from_slice(extra);
        assert_eq!(hint(&args).status.code(), Some(0));
        std::fs::read_to_string(&trace).unwrap().lines().count() - 1
    };
    assert_eq!(run(&[]), 3);
    assert_eq!(run(&["--steps", "5"]), 5);
    assert_eq!(run(&["--set", "steps=2"]), 2);
}

#[test]
fn cli_gradcheck_passes() {
    let out = hint(&["gradcheck"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("max_rel_err="));
    assert!(stdout
        .trim_end()
        .lines()
        .last()
        .unwrap()
        .starts_with("PASS"));
}
