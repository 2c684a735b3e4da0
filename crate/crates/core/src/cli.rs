//! The `hint` command line.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error, 3 failed
//! gradient check.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::encoders::encode_query_tensor;
use crate::encoders::encode_target_tensor;
use crate::error::{Error, Result};
use crate::harness::{
    evaluate, format_trace, generate_synthetic, gradcheck, load_params, save_params, train,
    FeatureStore, RunConfig, SyntheticSpec, GRADCHECK_TOL,
};
use crate::scoring::{pair_score, ScoringConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_GRADCHECK: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "hint",
    about = "Composed retrieval on feature tensors",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic HFT1 feature file.
    Gen {
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        q: usize,
        #[arg(long, default_value_t = 6)]
        l: usize,
        #[arg(long, default_value_t = 32)]
        d: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a feature file and save the parameters.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out_params: PathBuf,
        /// CSV loss trace.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Rank every query against the full gallery and report recalls.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Report file; printed to stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients of the full loss.
    Gradcheck {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
    },
    /// Print the relevance score and pooled cosine of one query/target pair.
    Score {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        i: usize,
        #[arg(long)]
        j: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Any config key, e.g. `--set qcr=false`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Overrides {
    fn resolve(&self, base: RunConfig) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load_over(base, path).map_err(|e| match e {
                Error::Io { path, source } => Error::Config {
                    line: 0,
                    message: format!("cannot read config {}: {source}", path.display()),
                },
                other => other,
            })?,
            None => base,
        };
        let flag = |e: String| Error::Config {
            line: 0,
            message: e,
        };
        let pairs = [
            ("steps", self.steps.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("batch", self.batch.map(|v| v.to_string())),
            ("lambda", self.lambda.map(|v| v.to_string())),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, &v).map_err(flag)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| flag(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k, v).map_err(flag)?;
        }
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_store_and_config(data: &Path, overrides: &Overrides) -> Result<(FeatureStore, RunConfig)> {
    let mut cfg = overrides.resolve(RunConfig::default())?;
    let store = FeatureStore::read(data)?;
    cfg.adopt_dims(&store);
    cfg.validate()?;
    Ok((store, cfg))
}

fn run_command(command: Command) -> Result<i32> {
    match command {
        Command::Gen {
            n,
            q,
            l,
            d,
            noise,
            seed,
            out,
        } => {
            if n == 0 || q == 0 || l == 0 || d == 0 || !(noise >= 0.0) {
                return Err(Error::Config {
                    line: 0,
                    message: "gen needs positive --n --q --l --d and --noise >= 0".into(),
                });
            }
            let store = generate_synthetic(&SyntheticSpec {
                n,
                queries: q,
                text_len: l,
                dim: d,
                noise_sigma: noise,
                seed,
                ..Default::default()
            })?;
            store.write(&out)?;
            println!("wrote {n} items (Q={q} L={l} D={d}) to {}", out.display());
        }
        Command::Train {
            data,
            overrides,
            out_params,
            trace,
        } => {
            let (store, cfg) = load_store_and_config(&data, &overrides)?;
            if cfg.batch > store.len() {
                return Err(Error::Config {
                    line: 0,
                    message: format!("batch {} exceeds item count {}", cfg.batch, store.len()),
                });
            }
            let outcome = train(&store, &cfg)?;
            save_params(&outcome.params, &out_params)?;
            if let Some(path) = trace {
                write_text(&path, &format_trace(&outcome.trace))?;
            }
            if let (Some(first), Some(last)) = (outcome.trace.first(), outcome.trace.last()) {
                println!(
                    "steps={} initial_loss={} final_loss={}",
                    cfg.steps, first.total, last.total
                );
            }
            println!("wrote params to {}", out_params.display());
        }
        Command::Eval {
            data,
            params,
            overrides,
            report,
        } => {
            let (store, cfg) = load_store_and_config(&data, &overrides)?;
            let p = load_params(&params, &cfg.encoder())?;
            let text = evaluate(&store, &p, &cfg)?.to_kv();
            match report {
                Some(path) => write_text(&path, &text)?,
                None => print!("{text}"),
            }
        }
        Command::Gradcheck { overrides, h } => {
            if !(h > 0.0) {
                return Err(Error::Config {
                    line: 0,
                    message: "--h must be positive".into(),
                });
            }
            let cfg = overrides.resolve(RunConfig::tiny())?;
            let r = gradcheck(&cfg, h)?;
            println!(
                "params={} kink_params={} loss={}",
                r.params_checked, r.kink_params, r.loss
            );
            println!(
                "max_rel_err={:e} at {} (analytic {:e}, numeric {:e})",
                r.max_rel_error, r.worst_param, r.worst_analytic, r.worst_numeric
            );
            let ok = r.passed();
            println!(
                "{} (tolerance {GRADCHECK_TOL:e})",
                if ok { "PASS" } else { "FAIL" }
            );
            if !ok {
                return Ok(EXIT_GRADCHECK);
            }
        }
        Command::Score {
            data,
            params,
            i,
            j,
            overrides,
        } => {
            let (store, cfg) = load_store_and_config(&data, &overrides)?;
            for (name, idx) in [("i", i), ("j", j)] {
                if idx >= store.len() {
                    return Err(Error::OutOfRange {
                        op: if name == "i" {
                            "score --i"
                        } else {
                            "score --j"
                        },
                        index: idx,
                        len: store.len(),
                    });
                }
            }
            let p = load_params(&params, &cfg.encoder())?;
            let enc = cfg.encoder();
            let u = encode_query_tensor(&p, &enc, &store.reference(i), &store.text(i))?;
            let f = encode_target_tensor(&p, &enc, &store.target(j))?;
            let score = pair_score(&u, &f, &cfg.scoring())?;
            let cosine = pair_score(
                &u,
                &f,
                &ScoringConfig {
                    qcr: false,
                    ..cfg.scoring()
                },
            )?;
            println!("pair_score={score}");
            println!("cosine={cosine}");
        }
    }
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run_command(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
