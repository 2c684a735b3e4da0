//! Feature files, synthetic data, run configuration, training, evaluation
//! and gradient checking.

mod config;
mod eval;
mod features;
mod gradcheck;
mod params_io;
mod train;

pub use config::{RunConfig, CONFIG_KEYS};
pub use eval::{
    draw_subset, encode_store, evaluate, gallery_scores, report_from_scores, RECALL_KS, SUBSET_KS,
};
pub use features::{generate_synthetic, FeatureStore, SyntheticSpec, Triplet, MAGIC};
pub use gradcheck::{
    gradcheck, gradcheck_with_floor, GradcheckReport, GRADCHECK_FLOOR, GRADCHECK_TOL,
};
pub use params_io::{load_params, params_from_json, params_to_json, save_params};
pub use train::{batch_loss, format_trace, train, BatchLoss, BatchSampler, TrainOutcome, Trainer};
