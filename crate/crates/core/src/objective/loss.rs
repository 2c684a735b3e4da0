use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Axis, Graph, Tensor, Var};

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {tau}"
        )))
    }
}

/// In-batch InfoNCE over a square score matrix whose diagonal holds the
/// positives: `mean_i −log softmax_j(S(i, j)/τ)[i]`.
pub fn in_batch_nll(g: &mut Graph, scores: Var, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let scaled = g.scale(scores, 1.0 / tau);
    let log_probs = g.log_softmax(scaled, Axis::Row)?;
    let positives = g.diagonal(log_probs)?;
    let mean = g.mean_all(positives);
    Ok(g.scale(mean, -1.0))
}

/// Contextual contrastive loss over a `B×B` relevance score matrix.
pub fn context_loss(g: &mut Graph, scores: Var, tau: f64) -> Result<Var> {
    in_batch_nll(g, scores, tau)
}

/// Rank loss: InfoNCE over cosine similarities of mean-pooled query and
/// target features (`B×D` each).
pub fn rank_loss(g: &mut Graph, query_pooled: Var, target_pooled: Var, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    if g.value(query_pooled).shape() != g.value(target_pooled).shape() {
        return Err(Error::Shape {
            op: "rank_loss",
            left: g.value(query_pooled).shape().to_vec(),
            right: g.value(target_pooled).shape().to_vec(),
        });
    }
    let rename = |e| match e {
        Error::ZeroNormRow { row, .. } => Error::ZeroNormRow {
            op: "rank_loss",
            row,
        },
        other => other,
    };
    let nq = g.normalize_rows(query_pooled).map_err(rename)?;
    let nt = g.normalize_rows(target_pooled).map_err(rename)?;
    let ntt = g.transpose(nt)?;
    let cos = g.matmul(nq, ntt)?;
    in_batch_nll(g, cos, tau)
}

pub fn context_loss_value(scores: &Tensor, tau: f64) -> Result<f64> {
    let mut g = Graph::new();
    let s = g.constant(scores.clone());
    let l = context_loss(&mut g, s, tau)?;
    Ok(g.value(l).item())
}

pub fn rank_loss_value(query_pooled: &Tensor, target_pooled: &Tensor, tau: f64) -> Result<f64> {
    let mut g = Graph::new();
    let u = g.constant(query_pooled.clone());
    let f = g.constant(target_pooled.clone());
    let l = rank_loss(&mut g, u, f, tau)?;
    Ok(g.value(l).item())
}

/// Both loss terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_rank: f64,
    pub l_context: f64,
    pub total: f64,
    pub lambda: f64,
}

/// `total = l_rank + λ·l_context`.
pub fn total_loss(l_rank: f64, l_context: f64, lambda: f64) -> LossBreakdown {
    LossBreakdown {
        l_rank,
        l_context,
        total: l_rank + lambda * l_context,
        lambda,
    }
}
