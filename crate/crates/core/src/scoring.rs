//! Contextual relevance between a fused query `Û` and target features `F`.
//!
//! For each prefix length `k` the first `k` query channels are compared with
//! every target channel (`softmax(Û[:k]·Fᵀ)`), the `k` rows are averaged, and
//! the `Q` per-level vectors are averaged again into `s_u`. With the row-wise
//! softmax the entries of `s_u` always average to exactly `1/Q`, so the pair
//! score reduces `s_u` by its maximum instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Axis, Graph, Tensor, Var};

/// How the relevance vector is collapsed to one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Reduction {
    #[default]
    Max,
    LogSumExp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    /// Softmax direction inside each prefix similarity.
    pub axis: Axis,
    pub reduction: Reduction,
    /// Multi-level prefixes; when off only the full `k = Q` level is used.
    pub multi_channel: bool,
    /// Relevance scoring; when off the score is the cosine of mean-pooled features.
    pub qcr: bool,
    /// Multiplies `Û·Fᵀ` before the prefix softmaxes. `1.0` scores exactly
    /// `softmax(Û[:k]·Fᵀ)`.
    pub logit_scale: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            axis: Axis::Row,
            reduction: Reduction::Max,
            multi_channel: true,
            qcr: true,
            logit_scale: 1.0,
        }
    }
}

/// `s_u` together with the per-level vectors it was averaged from.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceProfile {
    pub s_u: Vec<f64>,
    pub per_level: Vec<Vec<f64>>,
}

fn check_pair(g: &Graph, fused: Var, target: Var) -> Result<usize> {
    let (q, _) = g.value(fused).expect_matrix("relevance")?;
    if g.value(fused).shape() != g.value(target).shape() {
        return Err(Error::Shape {
            op: "relevance",
            left: g.value(fused).shape().to_vec(),
            right: g.value(target).shape().to_vec(),
        });
    }
    Ok(q)
}

/// `softmax(Û[:k]·Fᵀ)` as a `k×Q` matrix.
pub fn incremental_similarity(
    g: &mut Graph,
    fused: Var,
    target: Var,
    k: usize,
    axis: Axis,
) -> Result<Var> {
    let q = check_pair(g, fused, target)?;
    if k == 0 || k > q {
        return Err(Error::OutOfRange {
            op: "incremental_similarity",
            index: k,
            len: q + 1,
        });
    }
    let prefix = g.slice_rows(fused, 0, k)?;
    let ft = g.transpose(target)?;
    let logits = g.matmul(prefix, ft)?;
    g.softmax(logits, axis)
}

/// Per-level vectors (`levels × Q`) and `s_u` (`1×Q`) from the full logit
/// matrix `Û·Fᵀ`.
fn relevance_from_logits(g: &mut Graph, logits: Var, cfg: &ScoringConfig) -> Result<(Var, Var)> {
    let q = g.value(logits).rows();
    let logits = if cfg.logit_scale == 1.0 {
        logits
    } else {
        g.scale(logits, cfg.logit_scale)
    };
    let per_level = match (cfg.axis, cfg.multi_channel) {
        (Axis::Row, true) => {
            // Row-wise softmax rows do not depend on k, so every prefix mean is
            // a row of (lower-triangular averaging matrix) · softmax(Û·Fᵀ).
            let probs = g.softmax(logits, Axis::Row)?;
            let mut avg = Tensor::zeros(q, q);
            for k in 0..q {
                for i in 0..=k {
                    avg.data_mut()[k * q + i] = 1.0 / (k + 1) as f64;
                }
            }
            let avg = g.constant(avg);
            g.matmul(avg, probs)?
        }
        (axis, true) => {
            let mut levels = Vec::with_capacity(q);
            for k in 1..=q {
                let prefix = g.slice_rows(logits, 0, k)?;
                let sk = g.softmax(prefix, axis)?;
                levels.push(g.mean_pool(sk)?);
            }
            g.concat_rows(&levels)?
        }
        (axis, false) => {
            let probs = g.softmax(logits, axis)?;
            g.mean_pool(probs)?
        }
    };
    let s_u = g.mean_pool(per_level)?;
    Ok((per_level, s_u))
}

/// Differentiable `s_u` (`1×Q`) for one query/target pair.
pub fn relevance_vector(
    g: &mut Graph,
    fused: Var,
    target: Var,
    cfg: &ScoringConfig,
) -> Result<Var> {
    check_pair(g, fused, target)?;
    let ft = g.transpose(target)?;
    let logits = g.matmul(fused, ft)?;
    Ok(relevance_from_logits(g, logits, cfg)?.1)
}

pub fn relevance_profile(
    fused: &Tensor,
    target: &Tensor,
    cfg: &ScoringConfig,
) -> Result<RelevanceProfile> {
    let mut g = Graph::new();
    let u = g.constant(fused.clone());
    let f = g.constant(target.clone());
    check_pair(&g, u, f)?;
    let ft = g.transpose(f)?;
    let logits = g.matmul(u, ft)?;
    let (per_level, s_u) = relevance_from_logits(&mut g, logits, cfg)?;
    let levels = g.value(per_level);
    Ok(RelevanceProfile {
        s_u: g.value(s_u).data().to_vec(),
        per_level: (0..levels.rows()).map(|r| levels.row(r).to_vec()).collect(),
    })
}

/// Cosine similarity of the mean-pooled rows of two matrices, as `1×1`.
pub fn pooled_cosine(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let pa = g.mean_pool(a)?;
    let pb = g.mean_pool(b)?;
    let na = g.normalize_rows(pa)?;
    let nb = g.normalize_rows(pb)?;
    let nbt = g.transpose(nb)?;
    g.matmul(na, nbt)
}

/// Scalar score for one pair. With relevance scoring on, this lies in
/// `[1/Q, 1]` under the default max reduction.
pub fn pair_score_var(g: &mut Graph, fused: Var, target: Var, cfg: &ScoringConfig) -> Result<Var> {
    if !cfg.qcr {
        check_pair(g, fused, target)?;
        return pooled_cosine(g, fused, target);
    }
    let s_u = relevance_vector(g, fused, target, cfg)?;
    Ok(reduce(g, s_u, cfg.reduction))
}

fn reduce(g: &mut Graph, s_u: Var, reduction: Reduction) -> Var {
    match reduction {
        Reduction::Max => g.max(s_u),
        Reduction::LogSumExp => g.logsumexp(s_u),
    }
}

pub fn pair_score(fused: &Tensor, target: &Tensor, cfg: &ScoringConfig) -> Result<f64> {
    let mut g = Graph::new();
    let u = g.constant(fused.clone());
    let f = g.constant(target.clone());
    let s = pair_score_var(&mut g, u, f, cfg)?;
    Ok(g.value(s).item())
}

/// Pairwise scores, `entry(i, j) = score(queries[i], targets[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix(pub Tensor);

impl ScoreMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn cols(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }
}

/// Differentiable `B×G` score matrix.
pub fn score_matrix_var(
    g: &mut Graph,
    queries: &[Var],
    targets: &[Var],
    cfg: &ScoringConfig,
) -> Result<Var> {
    if queries.is_empty() || targets.is_empty() {
        return Err(Error::EmptyAxis { op: "score_matrix" });
    }
    for &t in targets {
        check_pair(g, queries[0], t)?;
    }
    for &u in queries {
        check_pair(g, u, targets[0])?;
    }

    if !cfg.qcr {
        let pooled_q = pooled_rows(g, queries)?;
        let pooled_t = pooled_rows(g, targets)?;
        let nq = g.normalize_rows(pooled_q)?;
        let nt = g.normalize_rows(pooled_t)?;
        let ntt = g.transpose(nt)?;
        return g.matmul(nq, ntt);
    }

    let transposed: Vec<Var> = targets
        .iter()
        .map(|&t| g.transpose(t))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(queries.len());
    for &u in queries {
        let mut row = Vec::with_capacity(targets.len());
        for &ft in &transposed {
            let logits = g.matmul(u, ft)?;
            let (_, s_u) = relevance_from_logits(g, logits, cfg)?;
            row.push(reduce(g, s_u, cfg.reduction));
        }
        rows.push(g.concat_cols(&row)?);
    }
    g.concat_rows(&rows)
}

/// Stacks the mean-pooled rows of each matrix into an `n×D` matrix.
pub fn pooled_rows(g: &mut Graph, items: &[Var]) -> Result<Var> {
    let pooled: Vec<Var> = items
        .iter()
        .map(|&x| g.mean_pool(x))
        .collect::<Result<_>>()?;
    g.concat_rows(&pooled)
}

pub fn score_matrix(
    queries: &[Tensor],
    targets: &[Tensor],
    cfg: &ScoringConfig,
) -> Result<ScoreMatrix> {
    let mut g = Graph::new();
    let qs: Vec<Var> = queries.iter().map(|t| g.constant(t.clone())).collect();
    let ts: Vec<Var> = targets.iter().map(|t| g.constant(t.clone())).collect();
    let s = score_matrix_var(&mut g, &qs, &ts, cfg)?;
    Ok(ScoreMatrix(g.value(s).clone()))
}
