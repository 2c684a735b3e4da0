use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

/// Shape and ablation settings for the query encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Number of query rows per image (`Q`).
    pub queries: usize,
    /// Feature width (`D`).
    pub dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub ln_eps: f64,
    pub init_std: f64,
    /// Visual context block; when off the position-encoded features pass through.
    pub vcm: bool,
    /// Cross-modal context block; when off the concatenation passes through.
    pub ccm: bool,
    /// Whole dual-context stage; when off `concat(ref, text)` goes straight to pooling.
    pub dce: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            queries: 8,
            dim: 32,
            heads: 4,
            ff_dim: 128,
            ln_eps: 1e-5,
            init_std: 0.02,
            vcm: true,
            ccm: true,
            dce: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.queries == 0 || self.dim == 0 || self.heads == 0 || self.ff_dim == 0 {
            return Err(Error::InvalidArgument(
                "queries, dim, heads and ff_dim must be positive".into(),
            ));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidArgument(format!(
                "dim {} is not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if !(self.ln_eps > 0.0) || !(self.init_std >= 0.0) {
            return Err(Error::InvalidArgument(
                "ln_eps must be positive and init_std nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// Weights of one post-norm attention + feed-forward block.
///
/// The attention projections are full `D×D` matrices whose column groups of
/// width `D/H` belong to the individual heads.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub w_query: T,
    pub w_key: T,
    pub w_value: T,
    pub w_out: T,
    pub ff_in: T,
    pub ff_in_bias: T,
    pub ff_out: T,
    pub ff_out_bias: T,
    pub ln1_gamma: T,
    pub ln1_beta: T,
    pub ln2_gamma: T,
    pub ln2_beta: T,
}

const BLOCK_FIELDS: [&str; 12] = [
    "w_query",
    "w_key",
    "w_value",
    "w_out",
    "ff_in",
    "ff_in_bias",
    "ff_out",
    "ff_out_bias",
    "ln1_gamma",
    "ln1_beta",
    "ln2_gamma",
    "ln2_beta",
];

impl<T> BlockParams<T> {
    fn refs(&self) -> [&T; 12] {
        [
            &self.w_query,
            &self.w_key,
            &self.w_value,
            &self.w_out,
            &self.ff_in,
            &self.ff_in_bias,
            &self.ff_out,
            &self.ff_out_bias,
            &self.ln1_gamma,
            &self.ln1_beta,
            &self.ln2_gamma,
            &self.ln2_beta,
        ]
    }

    fn refs_mut(&mut self) -> [&mut T; 12] {
        [
            &mut self.w_query,
            &mut self.w_key,
            &mut self.w_value,
            &mut self.w_out,
            &mut self.ff_in,
            &mut self.ff_in_bias,
            &mut self.ff_out,
            &mut self.ff_out_bias,
            &mut self.ln1_gamma,
            &mut self.ln1_beta,
            &mut self.ln2_gamma,
            &mut self.ln2_beta,
        ]
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> BlockParams<U> {
        BlockParams {
            w_query: f(&self.w_query),
            w_key: f(&self.w_key),
            w_value: f(&self.w_value),
            w_out: f(&self.w_out),
            ff_in: f(&self.ff_in),
            ff_in_bias: f(&self.ff_in_bias),
            ff_out: f(&self.ff_out),
            ff_out_bias: f(&self.ff_out_bias),
            ln1_gamma: f(&self.ln1_gamma),
            ln1_beta: f(&self.ln1_beta),
            ln2_gamma: f(&self.ln2_gamma),
            ln2_beta: f(&self.ln2_beta),
        }
    }
}

impl BlockParams<Tensor> {
    pub fn init<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Self {
        let (d, f, std) = (cfg.dim, cfg.ff_dim, cfg.init_std);
        BlockParams {
            w_query: Tensor::randn(d, d, std, rng),
            w_key: Tensor::randn(d, d, std, rng),
            w_value: Tensor::randn(d, d, std, rng),
            w_out: Tensor::randn(d, d, std, rng),
            ff_in: Tensor::randn(d, f, std, rng),
            ff_in_bias: Tensor::zeros(1, f),
            ff_out: Tensor::randn(f, d, std, rng),
            ff_out_bias: Tensor::zeros(1, d),
            ln1_gamma: Tensor::filled(1, d, 1.0),
            ln1_beta: Tensor::zeros(1, d),
            ln2_gamma: Tensor::filled(1, d, 1.0),
            ln2_beta: Tensor::zeros(1, d),
        }
    }
}

/// Every learnable tensor of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct HintParams<T> {
    /// Learned position encoding added to the reference queries (`Q×D`).
    pub pos_enc: T,
    pub vcm: BlockParams<T>,
    pub ccm: BlockParams<T>,
    /// Learnable pooling queries (`Q×D`).
    pub pool_queries: T,
    pub pool: BlockParams<T>,
}

impl<T> HintParams<T> {
    /// All tensors with stable dotted names, in the canonical order used by
    /// the optimizer, the gradient check and the params file.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = vec![("pos_enc".to_string(), &self.pos_enc)];
        push_block(&mut out, "vcm", &self.vcm);
        push_block(&mut out, "ccm", &self.ccm);
        out.push(("pool_queries".to_string(), &self.pool_queries));
        push_block(&mut out, "pool", &self.pool);
        out
    }

    pub fn tensors(&self) -> Vec<&T> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut T> {
        let mut out = vec![&mut self.pos_enc];
        out.extend(self.vcm.refs_mut());
        out.extend(self.ccm.refs_mut());
        out.push(&mut self.pool_queries);
        out.extend(self.pool.refs_mut());
        out
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> HintParams<U> {
        HintParams {
            pos_enc: f(&self.pos_enc),
            vcm: self.vcm.map(&mut f),
            ccm: self.ccm.map(&mut f),
            pool_queries: f(&self.pool_queries),
            pool: self.pool.map(&mut f),
        }
    }
}

fn push_block<'a, T>(out: &mut Vec<(String, &'a T)>, prefix: &str, block: &'a BlockParams<T>) {
    for (name, t) in BLOCK_FIELDS.iter().zip(block.refs()) {
        out.push((format!("{prefix}.{name}"), t));
    }
}

impl HintParams<Tensor> {
    pub fn init<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Self {
        let (q, d, std) = (cfg.queries, cfg.dim, cfg.init_std);
        let pos_enc = Tensor::randn(q, d, std, rng);
        let vcm = BlockParams::init(cfg, rng);
        let ccm = BlockParams::init(cfg, rng);
        let pool_queries = Tensor::randn(q, d, std, rng);
        let pool = BlockParams::init(cfg, rng);
        HintParams {
            pos_enc,
            vcm,
            ccm,
            pool_queries,
            pool,
        }
    }

    /// Loads every tensor into `graph`, as trainable leaves or as constants.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> HintParams<Var> {
        self.map(|t| {
            if trainable {
                graph.param(t.clone())
            } else {
                graph.constant(t.clone())
            }
        })
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// Overwrites all entries from a flat vector in canonical order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::InvalidArgument(format!(
                "flat parameter vector has {} entries, expected {}",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Checks every tensor shape against `cfg`.
    pub fn check_shapes(&self, cfg: &EncoderConfig) -> Result<()> {
        let template = HintParams::init(
            &EncoderConfig {
                init_std: 0.0,
                ..cfg.clone()
            },
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
        );
        for ((name, t), (_, want)) in self.named().into_iter().zip(template.named()) {
            if t.shape() != want.shape() {
                return Err(Error::Params(format!(
                    "{name} has shape {:?}, expected {:?}",
                    t.shape(),
                    want.shape()
                )));
            }
        }
        Ok(())
    }
}
