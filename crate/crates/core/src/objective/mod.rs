//! Training objective: contextual contrastive loss, rank loss, their
//! weighted sum, and the AdamW optimizer.

mod adamw;
mod loss;

pub use adamw::{adamw_step, AdamWConfig, OptimState};
pub use loss::{
    context_loss, context_loss_value, in_batch_nll, rank_loss, rank_loss_value, total_loss,
    LossBreakdown,
};
