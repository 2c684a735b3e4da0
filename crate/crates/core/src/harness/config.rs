//! Run configuration and its `key = value` file format.
//!
//! ```text
//! # desk-scale overfit run
//! d = 32
//! lr = 1e-3
//! steps = 500
//! qcr = false      # ablate relevance scoring
//! ```

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::numerics::Axis;
use crate::objective::AdamWConfig;
use crate::retrieval::DatasetKind;
use crate::scoring::{Reduction, ScoringConfig};

use super::FeatureStore;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub queries: usize,
    pub text_len: usize,
    pub dim: usize,
    pub heads: usize,
    /// Defaults to `4·dim` when unset.
    pub ff_dim: Option<usize>,
    pub init_std: f64,
    pub ln_eps: f64,

    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,

    pub lambda: f64,
    pub tau: f64,
    /// Separate temperature for the rank loss; shares `tau` when unset.
    pub tau_rank: Option<f64>,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,

    pub vcm: bool,
    pub ccm: bool,
    pub dce: bool,
    pub mc: bool,
    pub qcr: bool,
    /// Scale on the relevance logits; see [`ScoringConfig::logit_scale`].
    pub qcr_scale: f64,
    pub rank_loss: bool,
    pub context_loss: bool,

    pub softmax_axis: Axis,
    pub reduction: Reduction,
    pub subset_size: usize,
    pub dataset: DatasetKind,
}

impl Default for RunConfig {
    fn default() -> Self {
        let adamw = AdamWConfig::default();
        RunConfig {
            queries: 8,
            text_len: 6,
            dim: 32,
            heads: 4,
            ff_dim: None,
            init_std: 0.02,
            ln_eps: 1e-5,
            lr: adamw.lr,
            beta1: adamw.beta1,
            beta2: adamw.beta2,
            eps: adamw.eps,
            weight_decay: adamw.weight_decay,
            lambda: 0.2,
            tau: 0.07,
            tau_rank: None,
            batch: 8,
            steps: 200,
            seed: 0,
            vcm: true,
            ccm: true,
            dce: true,
            mc: true,
            qcr: true,
            qcr_scale: 1.0,
            rank_loss: true,
            context_loss: true,
            softmax_axis: Axis::Row,
            reduction: Reduction::Max,
            subset_size: 6,
            dataset: DatasetKind::Cirr,
        }
    }
}

/// Every key accepted by [`RunConfig::set`].
pub const CONFIG_KEYS: &[&str] = &[
    "q",
    "l",
    "d",
    "heads",
    "d_ff",
    "init_std",
    "ln_eps",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "weight_decay",
    "lambda",
    "tau",
    "tau_rank",
    "batch",
    "steps",
    "seed",
    "vcm",
    "ccm",
    "dce",
    "mc",
    "qcr",
    "qcr_scale",
    "rank_loss",
    "context_loss",
    "softmax_axis",
    "reduction",
    "subset_size",
    "dataset",
];

fn parse<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value {value:?} for {key}"))
}

impl RunConfig {
    /// The small configuration used for gradient checks.
    pub fn tiny() -> Self {
        RunConfig {
            queries: 4,
            text_len: 3,
            dim: 8,
            heads: 2,
            batch: 3,
            ..Default::default()
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key.trim() {
            "q" => self.queries = parse(key, v)?,
            "l" => self.text_len = parse(key, v)?,
            "d" => self.dim = parse(key, v)?,
            "heads" | "h" => self.heads = parse(key, v)?,
            "d_ff" => self.ff_dim = Some(parse(key, v)?),
            "init_std" => self.init_std = parse(key, v)?,
            "ln_eps" => self.ln_eps = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "eps" => self.eps = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "tau" => self.tau = parse(key, v)?,
            "tau_rank" => self.tau_rank = Some(parse(key, v)?),
            "batch" | "b" => self.batch = parse(key, v)?,
            "steps" => self.steps = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "vcm" => self.vcm = parse(key, v)?,
            "ccm" => self.ccm = parse(key, v)?,
            "dce" => self.dce = parse(key, v)?,
            "mc" => self.mc = parse(key, v)?,
            "qcr" => self.qcr = parse(key, v)?,
            "qcr_scale" => self.qcr_scale = parse(key, v)?,
            "rank_loss" => self.rank_loss = parse(key, v)?,
            "context_loss" => self.context_loss = parse(key, v)?,
            "softmax_axis" => {
                self.softmax_axis = match v {
                    "rows" | "row" => Axis::Row,
                    "cols" | "col" => Axis::Col,
                    _ => return Err(format!("softmax_axis must be rows or cols, got {v:?}")),
                }
            }
            "reduction" => {
                self.reduction = match v {
                    "max" => Reduction::Max,
                    "logsumexp" => Reduction::LogSumExp,
                    _ => return Err(format!("reduction must be max or logsumexp, got {v:?}")),
                }
            }
            "subset_size" => self.subset_size = parse(key, v)?,
            "dataset" => {
                self.dataset = match v {
                    "cirr" => DatasetKind::Cirr,
                    "fashioniq" => DatasetKind::FashionIq,
                    _ => return Err(format!("dataset must be cirr or fashioniq, got {v:?}")),
                }
            }
            other => {
                return Err(format!(
                    "unknown key {other:?}; valid keys: {}",
                    CONFIG_KEYS.join(", ")
                ))
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            self.set(key, value).map_err(|message| Error::Config {
                line: i + 1,
                message,
            })?;
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        Self::parse_str_over(RunConfig::default(), text)
    }

    pub fn parse_str_over(base: RunConfig, text: &str) -> Result<Self> {
        let mut cfg = base;
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    pub fn load_over(base: RunConfig, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str_over(base, &text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| {
            Err(Error::Config {
                line: 0,
                message: m.to_string(),
            })
        };
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be nonnegative");
        }
        if !(self.tau > 0.0) || self.tau_rank.is_some_and(|t| !(t > 0.0)) {
            return bad("temperatures must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !self.rank_loss && !self.context_loss {
            return bad("at least one of rank_loss and context_loss must be enabled");
        }
        if !(self.qcr_scale > 0.0) || !self.qcr_scale.is_finite() {
            return bad("qcr_scale must be positive and finite");
        }
        if self.subset_size == 0 {
            return bad("subset_size must be at least 1");
        }
        self.encoder().validate().map_err(|e| Error::Config {
            line: 0,
            message: e.to_string(),
        })
    }

    /// Takes `(Q, L, D)` from a feature store.
    pub fn adopt_dims(&mut self, store: &FeatureStore) {
        self.queries = store.queries();
        self.text_len = store.text_len();
        self.dim = store.dim();
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            queries: self.queries,
            dim: self.dim,
            heads: self.heads,
            ff_dim: self.ff_dim.unwrap_or(4 * self.dim),
            ln_eps: self.ln_eps,
            init_std: self.init_std,
            vcm: self.vcm,
            ccm: self.ccm,
            dce: self.dce,
        }
    }

    pub fn scoring(&self) -> ScoringConfig {
        ScoringConfig {
            axis: self.softmax_axis,
            reduction: self.reduction,
            multi_channel: self.mc,
            qcr: self.qcr,
            logit_scale: self.qcr_scale,
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn rank_tau(&self) -> f64 {
        self.tau_rank.unwrap_or(self.tau)
    }
}
