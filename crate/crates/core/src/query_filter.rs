//! Quality filters for synthetic queries.
//!
//! Two filters run in order: a blacklist of phrases that refer to the source
//! passage itself ("this circular"), then a recovery check that keeps a query
//! only if a reference retriever ranks its source passage within the top `k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query_gen::SyntheticQuery;
use crate::retrieval::Retriever;
use crate::text::fold;

pub const DEFAULT_RECOVERY_K: usize = 40;

pub fn default_blacklist() -> Vec<String> {
    vec!["quy định này".to_owned(), "thông tư này".to_owned()]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelfReferenceDrop {
    pub query_id: String,
    pub phrase: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryDrop {
    pub query_id: String,
    /// Rank of the source passage, when it was retrieved at all.
    pub rank_found: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input_count: usize,
    pub kept: Vec<String>,
    /// Rank of the source passage for each entry of `kept`.
    pub kept_ranks: Vec<usize>,
    pub dropped_self_ref: Vec<SelfReferenceDrop>,
    pub dropped_recovery: Vec<RecoveryDrop>,
    pub pass_rate: f64,
}

impl FilterReport {
    fn finish(mut self) -> Self {
        self.pass_rate = if self.input_count == 0 {
            0.0
        } else {
            self.kept.len() as f64 / self.input_count as f64
        };
        self
    }
}

/// Case-folded blacklist ready for matching.
#[derive(Debug, Clone)]
pub struct Blacklist {
    phrases: Vec<(String, String)>,
}

impl Blacklist {
    pub fn new(phrases: &[String]) -> Result<Self> {
        let mut out = Vec::with_capacity(phrases.len());
        for p in phrases {
            let folded = fold(p.trim());
            if folded.is_empty() {
                return Err(Error::invalid("blacklist phrases must be non-empty"));
            }
            out.push((p.clone(), folded));
        }
        Ok(Self { phrases: out })
    }

    /// The first blacklist phrase contained in `text`, if any.
    pub fn matched(&self, text: &str) -> Option<&str> {
        let folded = fold(text);
        self.phrases
            .iter()
            .find(|(_, f)| folded.contains(f.as_str()))
            .map(|(orig, _)| orig.as_str())
    }
}

impl Default for Blacklist {
    fn default() -> Self {
        Self::new(&default_blacklist()).expect("default blacklist is valid")
    }
}

/// `Some(phrase)` when the query must be dropped.
pub fn self_reference_filter<'a>(q: &SyntheticQuery, blacklist: &'a Blacklist) -> Option<&'a str> {
    blacklist.matched(&q.text)
}

/// Rank (1-based) of the query's source passage among the top `k`, or `None`.
fn recovery_rank(q: &SyntheticQuery, retriever: &dyn Retriever, k: usize) -> Result<Option<usize>> {
    let ranking = retriever.retrieve(&q.text, k)?;
    Ok(ranking
        .iter()
        .take(k)
        .position(|r| r.passage_id == q.passage_id)
        .map(|i| i + 1))
}

fn check_known(queries: &[&SyntheticQuery], retriever: &dyn Retriever) -> Result<()> {
    for q in queries {
        if !retriever.contains(&q.passage_id) {
            return Err(Error::UnknownPassage {
                query_id: q.id.clone(),
                passage_id: q.passage_id.clone(),
            });
        }
    }
    Ok(())
}

fn recover_all(
    queries: &[&SyntheticQuery],
    retriever: &dyn Retriever,
    k: usize,
) -> Result<Vec<Option<usize>>> {
    use rayon::prelude::*;
    queries
        .par_iter()
        .map(|q| recovery_rank(q, retriever, k))
        .collect()
}

/// Keeps a query iff its source passage ranks at or above `k`.
pub fn recovery_filter(
    queries: &[SyntheticQuery],
    retriever: &dyn Retriever,
    k: usize,
) -> Result<FilterReport> {
    filter_queries(queries, None, retriever, k)
}

/// Self-reference filter (when a blacklist is given) followed by the recovery
/// filter. Every input query lands in exactly one report bucket.
pub fn filter_queries(
    queries: &[SyntheticQuery],
    blacklist: Option<&Blacklist>,
    retriever: &dyn Retriever,
    k: usize,
) -> Result<FilterReport> {
    if k == 0 {
        return Err(Error::invalid("recovery k must be at least 1"));
    }
    let mut report = FilterReport {
        input_count: queries.len(),
        kept: Vec::new(),
        kept_ranks: Vec::new(),
        dropped_self_ref: Vec::new(),
        dropped_recovery: Vec::new(),
        pass_rate: 0.0,
    };
    let mut survivors = Vec::with_capacity(queries.len());
    for q in queries {
        match blacklist.and_then(|b| self_reference_filter(q, b)) {
            Some(phrase) => report.dropped_self_ref.push(SelfReferenceDrop {
                query_id: q.id.clone(),
                phrase: phrase.to_owned(),
            }),
            None => survivors.push(q),
        }
    }
    check_known(&survivors, retriever)?;
    let ranks = recover_all(&survivors, retriever, k)?;
    for (q, rank) in survivors.iter().zip(ranks) {
        match rank {
            Some(r) => {
                report.kept.push(q.id.clone());
                report.kept_ranks.push(r);
            }
            None => report.dropped_recovery.push(RecoveryDrop {
                query_id: q.id.clone(),
                rank_found: None,
            }),
        }
    }
    Ok(report.finish())
}

/// The subset of `queries` listed as kept in `report`, in input order.
pub fn kept_queries(queries: &[SyntheticQuery], report: &FilterReport) -> Vec<SyntheticQuery> {
    let kept: std::collections::HashSet<&str> = report.kept.iter().map(String::as_str).collect();
    queries
        .iter()
        .filter(|q| kept.contains(q.id.as_str()))
        .cloned()
        .collect()
}
