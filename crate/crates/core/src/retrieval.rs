//! Ranked results and the retriever abstraction consumed by filtering and
//! hard-negative mining.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPassage {
    pub passage_id: String,
    pub score: f64,
}

impl ScoredPassage {
    pub fn new(passage_id: impl Into<String>, score: f64) -> Self {
        Self {
            passage_id: passage_id.into(),
            score,
        }
    }
}

/// A single query's ranked result list.
pub type Ranking = Vec<ScoredPassage>;

/// Score descending, then passage id ascending.
pub fn result_order(a: &ScoredPassage, b: &ScoredPassage) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.passage_id.cmp(&b.passage_id))
}

/// Selects the `top_k` best of `scores` (indexed by ordinal into `ids`) under
/// [`result_order`].
pub fn rank_top_k(ids: &[String], scores: &[f64], top_k: usize) -> Ranking {
    debug_assert_eq!(ids.len(), scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let cmp = |&a: &usize, &b: &usize| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| ids[a].cmp(&ids[b]))
    };
    if top_k < order.len() {
        order.select_nth_unstable_by(top_k, cmp);
        order.truncate(top_k);
    }
    order.sort_unstable_by(cmp);
    order
        .into_iter()
        .map(|i| ScoredPassage::new(ids[i].clone(), scores[i]))
        .collect()
}

/// Anything that maps query text to a ranked list of passage ids.
pub trait Retriever: Send + Sync {
    fn retrieve(&self, query: &str, top_k: usize) -> Result<Ranking>;

    fn contains(&self, passage_id: &str) -> bool;

    /// Passage ids in index order.
    fn passage_ids(&self) -> &[String];
}
