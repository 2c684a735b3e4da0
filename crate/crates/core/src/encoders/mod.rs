//! Dual-context query encoder: position encoding, visual and cross-modal
//! context blocks, and learnable-query pooling.
//!
//! All functions record onto a [`Graph`] so the same code serves training
//! (trainable leaves) and inference (constant leaves).

mod params;

pub use params::{BlockParams, EncoderConfig, HintParams};

use crate::error::{Error, Result};
use crate::numerics::{Axis, Graph, Tensor, Var};

/// Result of one block application, with the per-head attention weights
/// (`n_query × n_key` each) kept for inspection.
#[derive(Debug, Clone)]
pub struct BlockOutput {
    pub out: Var,
    pub attention: Vec<Var>,
}

/// `V + P`, elementwise.
pub fn positional_encode(g: &mut Graph, features: Var, pos_enc: Var) -> Result<Var> {
    g.add(features, pos_enc)
}

/// Multi-head scaled dot-product attention of `queries` over `keys_values`,
/// followed by the output projection.
fn multi_head_attention(
    g: &mut Graph,
    queries: Var,
    keys_values: Var,
    block: &BlockParams<Var>,
    cfg: &EncoderConfig,
) -> Result<(Var, Vec<Var>)> {
    let q = g.matmul(queries, block.w_query)?;
    let k = g.matmul(keys_values, block.w_key)?;
    let v = g.matmul(keys_values, block.w_value)?;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let mut heads = Vec::with_capacity(cfg.heads);
    let mut weights = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let kt = g.transpose(kh)?;
        let logits = g.matmul(qh, kt)?;
        let logits = g.scale(logits, scale);
        let attn = g.softmax(logits, Axis::Row)?;
        heads.push(g.matmul(attn, vh)?);
        weights.push(attn);
    }
    let merged = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat_cols(&heads)?
    };
    Ok((g.matmul(merged, block.w_out)?, weights))
}

/// Post-norm block: `X' = LN(MSA(Xq, Xkv) + Xq)`, `out = LN(X' + FFN(X'))`.
///
/// With `queries == keys_values` this is the self-attention transformer
/// block; otherwise it is the cross-attention variant used for pooling.
pub fn attention_block(
    g: &mut Graph,
    queries: Var,
    keys_values: Var,
    block: &BlockParams<Var>,
    cfg: &EncoderConfig,
) -> Result<BlockOutput> {
    let (nq, dq) = g.value(queries).expect_matrix("attention_block")?;
    let (_, dk) = g.value(keys_values).expect_matrix("attention_block")?;
    if nq == 0 {
        return Err(Error::EmptyAxis {
            op: "attention_block",
        });
    }
    if dq != cfg.dim || dk != cfg.dim {
        return Err(Error::Shape {
            op: "attention_block",
            left: g.value(queries).shape().to_vec(),
            right: g.value(keys_values).shape().to_vec(),
        });
    }

    let (attn_out, attention) = multi_head_attention(g, queries, keys_values, block, cfg)?;
    let residual = g.add(attn_out, queries)?;
    let mid = g.layer_norm(residual, block.ln1_gamma, block.ln1_beta, cfg.ln_eps)?;

    let hidden = g.matmul(mid, block.ff_in)?;
    let hidden = g.add_row(hidden, block.ff_in_bias)?;
    let hidden = g.relu(hidden)?;
    let ff = g.matmul(hidden, block.ff_out)?;
    let ff = g.add_row(ff, block.ff_out_bias)?;
    let residual = g.add(mid, ff)?;
    let out = g.layer_norm(residual, block.ln2_gamma, block.ln2_beta, cfg.ln_eps)?;
    Ok(BlockOutput { out, attention })
}

pub fn transformer_block(
    g: &mut Graph,
    x: Var,
    block: &BlockParams<Var>,
    cfg: &EncoderConfig,
) -> Result<BlockOutput> {
    attention_block(g, x, x, block, cfg)
}

/// Visual context modeling over position-encoded reference features.
pub fn vcm(
    g: &mut Graph,
    visual: Var,
    params: &HintParams<Var>,
    cfg: &EncoderConfig,
) -> Result<Var> {
    if !cfg.vcm {
        return Ok(visual);
    }
    Ok(transformer_block(g, visual, &params.vcm, cfg)?.out)
}

/// Cross-modal context over `[V̂; T]`, giving `(Q+L)×D`.
pub fn ccm(
    g: &mut Graph,
    visual_ctx: Var,
    text: Var,
    params: &HintParams<Var>,
    cfg: &EncoderConfig,
) -> Result<Var> {
    let joint = g.concat_rows(&[visual_ctx, text])?;
    if !cfg.ccm {
        return Ok(joint);
    }
    Ok(transformer_block(g, joint, &params.ccm, cfg)?.out)
}

/// Learnable queries cross-attend to `context`, giving a `Q×D` summary.
pub fn qformer_pool(
    g: &mut Graph,
    context: Var,
    params: &HintParams<Var>,
    cfg: &EncoderConfig,
) -> Result<BlockOutput> {
    attention_block(g, params.pool_queries, context, &params.pool, cfg)
}

/// Full query path: reference `Q×D` and text `L×D` features to the fused
/// `Q×D` representation, honoring the ablation switches.
pub fn encode_query(
    g: &mut Graph,
    reference: Var,
    text: Var,
    params: &HintParams<Var>,
    cfg: &EncoderConfig,
) -> Result<Var> {
    let context = if cfg.dce {
        let visual = positional_encode(g, reference, params.pos_enc)?;
        let visual_ctx = vcm(g, visual, params, cfg)?;
        ccm(g, visual_ctx, text, params, cfg)?
    } else {
        g.concat_rows(&[reference, text])?
    };
    Ok(qformer_pool(g, context, params, cfg)?.out)
}

/// Target path: raw target features through the shared pooling block.
pub fn encode_target(
    g: &mut Graph,
    target: Var,
    params: &HintParams<Var>,
    cfg: &EncoderConfig,
) -> Result<Var> {
    Ok(qformer_pool(g, target, params, cfg)?.out)
}

/// Non-differentiable convenience wrapper around [`encode_query`].
pub fn encode_query_tensor(
    params: &HintParams<Tensor>,
    cfg: &EncoderConfig,
    reference: &Tensor,
    text: &Tensor,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let r = g.constant(reference.clone());
    let t = g.constant(text.clone());
    let out = encode_query(&mut g, r, t, &p, cfg)?;
    Ok(g.value(out).clone())
}

/// Non-differentiable convenience wrapper around [`encode_target`].
pub fn encode_target_tensor(
    params: &HintParams<Tensor>,
    cfg: &EncoderConfig,
    target: &Tensor,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let t = g.constant(target.clone());
    let out = encode_target(&mut g, t, &p, cfg)?;
    Ok(g.value(out).clone())
}
