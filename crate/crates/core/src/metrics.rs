//! Recall@k and MRR@k over ranked document lists.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Ranked document ids per query id.
pub type RankedResults = BTreeMap<String, Vec<String>>;
/// Relevant document ids per query id.
pub type Qrels = BTreeMap<String, BTreeSet<String>>;

/// 1-based rank of the first relevant document, if any.
fn first_hit(ranked: &[String], relevant: &BTreeSet<String>) -> Option<usize> {
    ranked.iter().position(|d| relevant.contains(d)).map(|p| p + 1)
}

/// Per-query first-hit ranks over every judged query; unjudged result
/// entries are an error and unanswered queries count as misses.
fn ranks(results: &RankedResults, qrels: &Qrels) -> Result<Vec<Option<usize>>> {
    if let Some(q) = results.keys().find(|q| !qrels.contains_key(*q)) {
        return Err(Error::UnknownQuery(q.clone()));
    }
    if let Some((q, _)) = qrels.iter().find(|(_, rel)| rel.is_empty()) {
        return Err(Error::InvalidArgument(format!("query {q} has no relevant documents")));
    }
    Ok(qrels
        .iter()
        .map(|(q, rel)| results.get(q).and_then(|ranked| first_hit(ranked, rel)))
        .collect())
}

/// Fraction of queries with a relevant document in the top `k`.
pub fn recall_at_k(results: &RankedResults, qrels: &Qrels, k: usize) -> Result<f64> {
    let ranks = ranks(results, qrels)?;
    if ranks.is_empty() {
        return Ok(0.0);
    }
    let hits = ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count();
    Ok(hits as f64 / ranks.len() as f64)
}

/// Mean of `1 / rank` of the first relevant document, zero beyond `k`.
pub fn mrr_at_k(results: &RankedResults, qrels: &Qrels, k: usize) -> Result<f64> {
    let ranks = ranks(results, qrels)?;
    if ranks.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = ranks.iter().map(|r| r.filter(|&r| r <= k).map_or(0.0, |r| 1.0 / r as f64)).sum();
    Ok(total / ranks.len() as f64)
}
