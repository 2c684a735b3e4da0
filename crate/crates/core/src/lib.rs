//! Context-aware composed image retrieval over precomputed feature tensors.
//!
//! A query is a reference image (`Q×D` query features) plus a modification
//! text (`L×D` token features). The query encoder models visual context,
//! fuses it with the text, and pools the result into `Q` rows that are
//! scored against target features with prefix-level relevance. Training
//! combines a cosine rank loss with a contextual contrastive loss.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod encoders;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod objective;
pub mod retrieval;
pub mod scoring;

pub use error::{Error, FormatError, Result};
