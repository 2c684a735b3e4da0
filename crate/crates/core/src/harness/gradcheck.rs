//! Finite-difference check of the full training objective.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoders::HintParams;
use crate::error::Result;
use crate::numerics::{relative_error, Graph, Tensor};

use super::{batch_loss, generate_synthetic, FeatureStore, RunConfig, SyntheticSpec};

/// Pass threshold on the maximum relative error.
pub const GRADCHECK_TOL: f64 = 1e-4;

/// Denominator floor for the relative error: `|a − n| / max(|a|, |n|, floor)`.
/// At `h = 1e-5` and an O(1) loss, double-precision cancellation leaves about
/// 1e-10 of absolute noise in every difference quotient, so entries smaller
/// than this floor are held to `|a − n| < 1e-4 · floor = 1e-9` instead.
pub const GRADCHECK_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub params_checked: usize,
    /// Entries whose difference probes crossed a relu kink.
    pub kink_params: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub loss: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRADCHECK_TOL
    }
}

/// Loss at `params` plus the relu activation pattern it ran with.
fn loss_at(
    params: &HintParams<Tensor>,
    store: &FeatureStore,
    batch: &[usize],
    cfg: &RunConfig,
    frozen: Option<&[Vec<bool>]>,
) -> Result<(f64, Vec<Vec<bool>>)> {
    let mut g = Graph::new();
    if let Some(p) = frozen {
        g.freeze_relu(p.to_vec());
    }
    let bound = params.bind(&mut g, false);
    let l = batch_loss(&mut g, &bound, store, batch, cfg)?;
    Ok((g.value(l.total).item(), g.relu_patterns()))
}

/// Compares analytic gradients of the total loss with central differences
/// of step `h` for every scalar parameter. Data is a synthetic batch of
/// `cfg.batch` items drawn with `cfg.seed`.
pub fn gradcheck(cfg: &RunConfig, h: f64) -> Result<GradcheckReport> {
    gradcheck_with_floor(cfg, h, GRADCHECK_FLOOR)
}

pub fn gradcheck_with_floor(cfg: &RunConfig, h: f64, floor: f64) -> Result<GradcheckReport> {
    cfg.validate()?;
    let store = generate_synthetic(&SyntheticSpec {
        n: cfg.batch,
        queries: cfg.queries,
        text_len: cfg.text_len,
        dim: cfg.dim,
        noise_sigma: 0.05,
        seed: cfg.seed,
        ..Default::default()
    })?;
    let batch: Vec<usize> = (0..cfg.batch).collect();
    let params = HintParams::init(&cfg.encoder(), &mut ChaCha8Rng::seed_from_u64(cfg.seed));

    let mut g = Graph::new();
    let bound = params.bind(&mut g, true);
    let loss = batch_loss(&mut g, &bound, &store, &batch, cfg)?;
    let loss_value = g.value(loss.total).item();
    g.backward(loss.total)?;

    let mut names = Vec::new();
    let mut analytic = Vec::new();
    for ((name, &v), t) in bound.named().into_iter().zip(params.tensors()) {
        match g.grad(v) {
            Some(gr) => analytic.extend_from_slice(gr.data()),
            None => analytic.extend(std::iter::repeat_n(0.0, t.len())),
        }
        for i in 0..t.len() {
            names.push(format!("{name}[{i}]"));
        }
    }

    // A central difference whose two probes run with a different relu
    // pattern than the base point straddles a kink: the loss is still
    // differentiable at the base point, but the difference quotient is not an
    // estimate of that derivative. Those entries are re-measured with the base
    // pattern frozen, which leaves the base point and its derivative unchanged.
    let flat = params.flatten();
    let (_, base_pattern) = loss_at(&params, &store, &batch, cfg, None)?;
    let mut probe = params.clone();
    let mut x = flat.clone();
    let mut numeric = Vec::with_capacity(flat.len());
    let mut kink_params = 0;
    for i in 0..flat.len() {
        let mut eval = |v: f64, frozen: Option<&[Vec<bool>]>| -> Result<(f64, Vec<Vec<bool>>)> {
            x[i] = v;
            probe.assign_flat(&x)?;
            let out = loss_at(&probe, &store, &batch, cfg, frozen);
            x[i] = flat[i];
            out
        };
        let (plus, p_plus) = eval(flat[i] + h, None)?;
        let (minus, p_minus) = eval(flat[i] - h, None)?;
        let d = if p_plus == base_pattern && p_minus == base_pattern {
            (plus - minus) / (2.0 * h)
        } else {
            kink_params += 1;
            let (plus, _) = eval(flat[i] + h, Some(&base_pattern))?;
            let (minus, _) = eval(flat[i] - h, Some(&base_pattern))?;
            (plus - minus) / (2.0 * h)
        };
        numeric.push(d);
    }

    let mut worst = 0;
    let mut max_rel = 0.0f64;
    for i in 0..flat.len() {
        let r = relative_error(analytic[i], numeric[i], floor);
        if !(r <= max_rel) {
            max_rel = r;
            worst = i;
        }
    }
    Ok(GradcheckReport {
        params_checked: flat.len(),
        kink_params,
        max_rel_error: max_rel,
        worst_param: names.get(worst).cloned().unwrap_or_default(),
        worst_analytic: analytic.get(worst).copied().unwrap_or(0.0),
        worst_numeric: numeric.get(worst).copied().unwrap_or(0.0),
        loss: loss_value,
    })
}
