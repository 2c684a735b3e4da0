//! Gallery ranking and recall metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gallery indices sorted by descending score, ties broken by ascending
/// index.
pub fn rank_gallery(scores: &[f64]) -> Result<Vec<usize>> {
    if scores.is_empty() {
        return Err(Error::EmptyAxis { op: "rank_gallery" });
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("score {i} is NaN")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(order)
}

/// Ranking of one query's gallery.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    pub query_id: usize,
    /// Gallery indices, best first.
    pub order: Vec<usize>,
    pub target: usize,
}

impl RankedList {
    pub fn new(query_id: usize, scores: &[f64], target: usize) -> Result<Self> {
        if target >= scores.len() {
            return Err(Error::OutOfRange {
                op: "RankedList",
                index: target,
                len: scores.len(),
            });
        }
        Ok(RankedList {
            query_id,
            order: rank_gallery(scores)?,
            target,
        })
    }

    /// Ranks only the candidates in `subset`. `order` then holds gallery
    /// indices drawn from the subset.
    pub fn within_subset(
        query_id: usize,
        scores: &[f64],
        subset: &[usize],
        target: usize,
    ) -> Result<Self> {
        if !subset.contains(&target) {
            return Err(Error::TargetNotInSubset { target });
        }
        if let Some(&bad) = subset.iter().find(|&&i| i >= scores.len()) {
            return Err(Error::OutOfRange {
                op: "within_subset",
                index: bad,
                len: scores.len(),
            });
        }
        if let Some(i) = subset.iter().position(|&i| scores[i].is_nan()) {
            return Err(Error::NonFinite(format!("score {} is NaN", subset[i])));
        }
        let mut order = subset.to_vec();
        order.sort_unstable();
        order.dedup();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Ok(RankedList {
            query_id,
            order,
            target,
        })
    }

    pub fn gallery_size(&self) -> usize {
        self.order.len()
    }

    /// 1-based position of the target.
    pub fn target_rank(&self) -> usize {
        self.order
            .iter()
            .position(|&i| i == self.target)
            .map(|p| p + 1)
            .expect("target is always ranked")
    }

    pub fn hit_at(&self, k: usize) -> bool {
        self.target_rank() <= k
    }
}

/// Fraction of queries whose target is in the top `k`. `k` larger than the
/// gallery counts every query as a hit.
pub fn recall_at_k(lists: &[RankedList], k: usize) -> f64 {
    if lists.is_empty() {
        return 0.0;
    }
    let hits = lists.iter().filter(|l| l.hit_at(k)).count();
    hits as f64 / lists.len() as f64
}

/// One query with its full-gallery scores and a candidate subset.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetQuery {
    pub scores: Vec<f64>,
    pub subset: Vec<usize>,
    pub target: usize,
}

/// Recall@k after restricting each query's candidates to its subset.
pub fn subset_recall_at_k(queries: &[SubsetQuery], k: usize) -> Result<f64> {
    let lists = queries
        .iter()
        .enumerate()
        .map(|(i, q)| RankedList::within_subset(i, &q.scores, &q.subset, q.target))
        .collect::<Result<Vec<_>>>()?;
    Ok(recall_at_k(&lists, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DatasetKind {
    /// Average is `(R@5 + Rs@1) / 2`.
    #[default]
    Cirr,
    /// Average is `(R@10 + R@50) / 2`.
    FashionIq,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub recall_at: BTreeMap<usize, f64>,
    pub subset_recall_at: BTreeMap<usize, f64>,
    pub fashioniq_avg: Option<f64>,
    pub cirr_avg: Option<f64>,
}

pub fn aggregate_report(
    recalls: BTreeMap<usize, f64>,
    subset_recalls: BTreeMap<usize, f64>,
    kind: DatasetKind,
) -> Result<EvalReport> {
    let recall = |k| recalls.get(&k).copied().ok_or(Error::MissingRecall { k });
    let mut report = EvalReport::default();
    match kind {
        DatasetKind::Cirr => {
            let r5 = recall(5)?;
            let rs1 = subset_recalls
                .get(&1)
                .copied()
                .ok_or(Error::MissingSubsetRecall { k: 1 })?;
            report.cirr_avg = Some((r5 + rs1) / 2.0);
        }
        DatasetKind::FashionIq => {
            report.fashioniq_avg = Some((recall(10)? + recall(50)?) / 2.0);
        }
    }
    report.recall_at = recalls;
    report.subset_recall_at = subset_recalls;
    Ok(report)
}

/// Arithmetic mean of per-category recalls, for every `k` present in all
/// categories.
pub fn average_categories(per_category: &[BTreeMap<usize, f64>]) -> Result<BTreeMap<usize, f64>> {
    let first = per_category.first().ok_or(Error::EmptyAxis {
        op: "average_categories",
    })?;
    let mut out = BTreeMap::new();
    for &k in first.keys() {
        let mut sum = 0.0;
        for cat in per_category {
            sum += cat.get(&k).copied().ok_or(Error::MissingRecall { k })?;
        }
        out.insert(k, sum / per_category.len() as f64);
    }
    Ok(out)
}

impl EvalReport {
    pub fn is_monotone(&self) -> bool {
        let vals: Vec<f64> = self.recall_at.values().copied().collect();
        vals.windows(2).all(|w| w[0] <= w[1])
    }

    /// `key=value` lines with percentages at two decimals.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.recall_at {
            let _ = writeln!(out, "R@{k}={:.2}", v * 100.0);
        }
        for (k, v) in &self.subset_recall_at {
            let _ = writeln!(out, "Rs@{k}={:.2}", v * 100.0);
        }
        if let Some(avg) = self.cirr_avg.or(self.fashioniq_avg) {
            let _ = writeln!(out, "Avg={:.2}", avg * 100.0);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        assert_eq!(rank_gallery(&[0.1, 0.9, 0.5]).unwrap(), vec![1, 2, 0]);
        assert_eq!(rank_gallery(&[0.3; 5]).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(rank_gallery(&[0.1, f64::NAN]).is_err());
        assert!(rank_gallery(&[]).is_err());
    }

    #[test]
    fn recall_examples() {
        let first = RankedList::new(0, &[0.9, 0.1], 0).unwrap();
        assert_eq!(recall_at_k(&[first.clone(), first.clone()], 1), 1.0);

        // target ranks 1 and 3
        let a = RankedList::new(0, &[0.9, 0.5, 0.1], 0).unwrap();
        let b = RankedList::new(1, &[0.9, 0.5, 0.1], 2).unwrap();
        assert_eq!(b.target_rank(), 3);
        assert_eq!(recall_at_k(&[a.clone(), b.clone()], 2), 0.5);
        assert_eq!(recall_at_k(&[a, b], 3), 1.0);
        assert_eq!(recall_at_k(&[first], 50), 1.0);
    }

    #[test]
    fn subset_examples() {
        let q = SubsetQuery {
            scores: vec![0.9, 0.1, 0.5],
            subset: vec![1],
            target: 1,
        };
        for k in 1..=3 {
            assert_eq!(
                subset_recall_at_k(std::slice::from_ref(&q), k).unwrap(),
                1.0
            );
        }
        let q = SubsetQuery {
            scores: (0..10).map(|i| i as f64).collect(),
            subset: vec![0, 2, 4, 5, 6, 7],
            target: 7,
        };
        assert_eq!(
            subset_recall_at_k(std::slice::from_ref(&q), 1).unwrap(),
            1.0
        );
        let bad = SubsetQuery { target: 9, ..q };
        assert!(matches!(
            subset_recall_at_k(&[bad], 1),
            Err(Error::TargetNotInSubset { target: 9 })
        ));
    }

    #[test]
    fn aggregate_requires_ks() {
        let recalls = BTreeMap::from([(1, 0.2), (5, 0.6)]);
        let subset = BTreeMap::from([(1, 0.4)]);
        let r = aggregate_report(recalls.clone(), subset.clone(), DatasetKind::Cirr).unwrap();
        assert!((r.cirr_avg.unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            aggregate_report(recalls.clone(), BTreeMap::new(), DatasetKind::Cirr),
            Err(Error::MissingSubsetRecall { k: 1 })
        ));
        assert!(matches!(
            aggregate_report(recalls, subset, DatasetKind::FashionIq),
            Err(Error::MissingRecall { k: 10 })
        ));
        let same = aggregate_report(
            BTreeMap::from([(5, 0.37)]),
            BTreeMap::from([(1, 0.37)]),
            DatasetKind::Cirr,
        )
        .unwrap();
        assert_eq!(same.cirr_avg, Some(0.37));
    }

    #[test]
    fn kv_format() {
        let r = aggregate_report(
            BTreeMap::from([(1, 0.5), (5, 1.0)]),
            BTreeMap::from([(1, 0.75)]),
            DatasetKind::Cirr,
        )
        .unwrap();
        assert_eq!(r.to_kv(), "R@1=50.00\nR@5=100.00\nRs@1=75.00\nAvg=87.50\n");
    }
}
