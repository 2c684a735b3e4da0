use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoders::{encode_query, encode_target, HintParams};
use crate::error::Result;
use crate::numerics::{Graph, Tensor, Var};
use crate::retrieval::{
    aggregate_report, recall_at_k, subset_recall_at_k, DatasetKind, EvalReport, RankedList,
    SubsetQuery,
};
use crate::scoring::{score_matrix, ScoreMatrix};

use super::{FeatureStore, RunConfig};

pub const RECALL_KS: [usize; 4] = [1, 5, 10, 50];
pub const SUBSET_KS: [usize; 3] = [1, 2, 3];

/// Fused query features and pooled target features for every item.
pub fn encode_store(
    store: &FeatureStore,
    params: &HintParams<Tensor>,
    cfg: &RunConfig,
) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    let enc = cfg.encoder();
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let mut queries = Vec::with_capacity(store.len());
    let mut targets = Vec::with_capacity(store.len());
    for i in 0..store.len() {
        let r = g.constant(store.reference(i));
        let t = g.constant(store.text(i));
        let f = g.constant(store.target(i));
        let u: Var = encode_query(&mut g, r, t, &bound, &enc)?;
        let ft: Var = encode_target(&mut g, f, &bound, &enc)?;
        queries.push(g.value(u).clone());
        targets.push(g.value(ft).clone());
    }
    Ok((queries, targets))
}

/// Scores every query against the whole target gallery.
pub fn gallery_scores(
    store: &FeatureStore,
    params: &HintParams<Tensor>,
    cfg: &RunConfig,
) -> Result<ScoreMatrix> {
    let (queries, targets) = encode_store(store, params, cfg)?;
    let scoring = cfg.scoring();
    let mut data = Vec::with_capacity(queries.len() * targets.len());
    for u in &queries {
        let row = score_matrix(std::slice::from_ref(u), &targets, &scoring)?;
        data.extend_from_slice(row.0.data());
    }
    Ok(ScoreMatrix(Tensor::matrix(
        queries.len(),
        targets.len(),
        data,
    )?))
}

/// Candidate subset for query `query`: its target plus `size − 1` other
/// gallery items, drawn from a generator seeded per query.
pub fn draw_subset(
    gallery: usize,
    target: usize,
    size: usize,
    seed: u64,
    query: usize,
) -> Vec<usize> {
    let size = size.clamp(1, gallery);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 + query as u64);
    let others = index::sample(&mut rng, gallery - 1, size - 1);
    let mut subset: Vec<usize> = others
        .into_iter()
        .map(|i| if i >= target { i + 1 } else { i })
        .collect();
    subset.push(target);
    subset.sort_unstable();
    subset
}

/// Recalls for a square score matrix whose diagonal holds the targets.
pub fn report_from_scores(
    scores: &ScoreMatrix,
    subset_size: usize,
    seed: u64,
    kind: DatasetKind,
) -> Result<EvalReport> {
    let g = scores.cols();
    let lists = (0..scores.rows())
        .map(|i| RankedList::new(i, scores.row(i), i))
        .collect::<Result<Vec<_>>>()?;
    let subset_queries: Vec<SubsetQuery> = (0..scores.rows())
        .map(|i| SubsetQuery {
            scores: scores.row(i).to_vec(),
            subset: draw_subset(g, i, subset_size, seed, i),
            target: i,
        })
        .collect();

    let recalls: BTreeMap<usize, f64> = RECALL_KS
        .iter()
        .map(|&k| (k, recall_at_k(&lists, k)))
        .collect();
    let subset_recalls = SUBSET_KS
        .iter()
        .map(|&k| Ok((k, subset_recall_at_k(&subset_queries, k)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    aggregate_report(recalls, subset_recalls, kind)
}

/// Ranks every query of `store` against its full target gallery.
pub fn evaluate(
    store: &FeatureStore,
    params: &HintParams<Tensor>,
    cfg: &RunConfig,
) -> Result<EvalReport> {
    let mut cfg = cfg.clone();
    cfg.adopt_dims(store);
    cfg.validate()?;
    params.check_shapes(&cfg.encoder())?;
    let scores = gallery_scores(store, params, &cfg)?;
    report_from_scores(&scores, cfg.subset_size, cfg.seed, cfg.dataset)
}
