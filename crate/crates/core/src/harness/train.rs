use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoders::{encode_query, encode_target, HintParams};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};
use crate::objective::{
    adamw_step, context_loss, rank_loss, total_loss, LossBreakdown, OptimState,
};
use crate::scoring::{pooled_rows, score_matrix_var};

use super::{FeatureStore, RunConfig};

/// Loss nodes recorded for one batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchLoss {
    pub total: Var,
    pub l_rank: Option<Var>,
    pub l_context: Option<Var>,
}

impl BatchLoss {
    pub fn breakdown(&self, g: &Graph, lambda: f64) -> LossBreakdown {
        let value = |v: Option<Var>| v.map_or(0.0, |v| g.value(v).item());
        let mut b = total_loss(value(self.l_rank), value(self.l_context), lambda);
        // keep the recorded total authoritative
        b.total = g.value(self.total).item();
        b
    }
}

/// Records the full objective for the items `indices` of `store`.
pub fn batch_loss(
    g: &mut Graph,
    params: &HintParams<Var>,
    store: &FeatureStore,
    indices: &[usize],
    cfg: &RunConfig,
) -> Result<BatchLoss> {
    let enc = cfg.encoder();
    let mut queries = Vec::with_capacity(indices.len());
    let mut targets = Vec::with_capacity(indices.len());
    for &i in indices {
        let r = g.constant(store.reference(i));
        let t = g.constant(store.text(i));
        let f = g.constant(store.target(i));
        queries.push(encode_query(g, r, t, params, &enc)?);
        targets.push(encode_target(g, f, params, &enc)?);
    }

    let l_context = if cfg.context_loss {
        let scores = score_matrix_var(g, &queries, &targets, &cfg.scoring())?;
        Some(context_loss(g, scores, cfg.tau)?)
    } else {
        None
    };
    let l_rank = if cfg.rank_loss {
        let pq = pooled_rows(g, &queries)?;
        let pt = pooled_rows(g, &targets)?;
        Some(rank_loss(g, pq, pt, cfg.rank_tau())?)
    } else {
        None
    };

    let total = match (l_rank, l_context) {
        (Some(r), Some(c)) => {
            let weighted = g.scale(c, cfg.lambda);
            g.add(r, weighted)?
        }
        (Some(r), None) => r,
        (None, Some(c)) => g.scale(c, cfg.lambda),
        (None, None) => {
            return Err(Error::InvalidArgument(
                "both loss terms are disabled".into(),
            ))
        }
    };
    Ok(BatchLoss {
        total,
        l_rank,
        l_context,
    })
}

/// Seeded epoch sampler: shuffles `0..n` each epoch and yields consecutive
/// batches, dropping a short final batch.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
}

impl BatchSampler {
    pub fn new(n: usize, batch: usize, seed: u64) -> Result<Self> {
        if batch == 0 || batch > n {
            return Err(Error::InvalidArgument(format!(
                "batch size {batch} must be in 1..={n}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(BatchSampler {
            rng,
            order: (0..n).collect(),
            cursor: n,
            batch,
        })
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor + self.batch > self.order.len() {
            self.order.sort_unstable();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let out = self.order[self.cursor..self.cursor + self.batch].to_vec();
        self.cursor += self.batch;
        out
    }
}

/// Step-by-step trainer, for callers that need to inspect the model between
/// updates.
pub struct Trainer<'a> {
    store: &'a FeatureStore,
    config: RunConfig,
    params: HintParams<Tensor>,
    optim: OptimState,
    sampler: BatchSampler,
    step: usize,
}

impl<'a> Trainer<'a> {
    /// Initializes parameters from `config.seed`. The store's dimensions
    /// replace those in `config`.
    pub fn new(store: &'a FeatureStore, config: &RunConfig) -> Result<Self> {
        let mut config = config.clone();
        config.adopt_dims(store);
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = HintParams::init(&config.encoder(), &mut rng);
        let optim = OptimState::new(config.adamw(), params.tensors());
        let sampler = BatchSampler::new(store.len(), config.batch, config.seed)?;
        Ok(Trainer {
            store,
            config,
            params,
            optim,
            sampler,
            step: 0,
        })
    }

    pub fn params(&self) -> &HintParams<Tensor> {
        &self.params
    }

    pub fn into_params(self) -> HintParams<Tensor> {
        self.params
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn step(&mut self) -> Result<LossBreakdown> {
        let indices = self.sampler.next_batch();
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, true);
        let loss = batch_loss(&mut g, &bound, self.store, &indices, &self.config)?;
        let breakdown = loss.breakdown(&g, self.config.lambda);
        if !breakdown.total.is_finite() {
            return Err(Error::NonFiniteLoss { step: self.step });
        }
        g.backward(loss.total)?;

        let grads: Vec<Tensor> = bound
            .tensors()
            .into_iter()
            .map(|&v| {
                g.grad(v).cloned().unwrap_or_else(|| {
                    let t = g.value(v);
                    Tensor::zeros(t.rows(), t.cols())
                })
            })
            .collect();
        let grad_refs: Vec<&Tensor> = grads.iter().collect();
        let mut params = self.params.tensors_mut();
        adamw_step(&mut params, &grad_refs, &mut self.optim)?;
        self.step += 1;
        Ok(breakdown)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: HintParams<Tensor>,
    pub trace: Vec<LossBreakdown>,
}

/// Runs `config.steps` AdamW updates on `store`.
pub fn train(store: &FeatureStore, config: &RunConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(store, config)?;
    let mut trace = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        trace.push(trainer.step()?);
    }
    Ok(TrainOutcome {
        params: trainer.into_params(),
        trace,
    })
}

/// CSV loss trace with a header row.
pub fn format_trace(trace: &[LossBreakdown]) -> String {
    let mut out = String::from("step,l_rank,l_context,lambda,total\n");
    for (i, b) in trace.iter().enumerate() {
        out.push_str(&format!(
            "{i},{},{},{},{}\n",
            b.l_rank, b.l_context, b.lambda, b.total
        ));
    }
    out
}
