//! Leave-one-out ranking evaluation: score aggregation over windows, NDCG@K,
//! and the BM25 and random baselines.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::domain::{CandidateSet, ItemId, SubsetAssessment, UserId};
use crate::seed::rng_for;
use crate::{Error, Result};

pub mod bm25;
pub mod report;

pub use bm25::{bm25_rank, bm25_scores, Bm25Params};
pub use report::{
    evaluate, render_comparison, render_reference, EvalConfig, MetricsReport, Ranker, ReferenceRow, UserMetrics,
    REFERENCE_ABLATION, REFERENCE_OVERALL,
};

/// Mean preference per item over the valid windows containing it; items seen
/// only in invalid windows score 0.
pub fn aggregate_scores(assessments: &[SubsetAssessment], set: &CandidateSet) -> Result<BTreeMap<ItemId, f64>> {
    if !assessments.iter().any(|a| a.valid) {
        return Err(Error::NoUsableAssessment);
    }
    let mut sums: BTreeMap<&ItemId, (f64, usize)> = set.items().iter().map(|i| (i, (0.0, 0))).collect();
    for a in assessments.iter().filter(|a| a.valid) {
        for (item, score) in &a.item_scores {
            if let Some(entry) = sums.get_mut(item) {
                entry.0 += score;
                entry.1 += 1;
            }
        }
    }
    Ok(sums.into_iter().map(|(item, (sum, n))| (item.clone(), if n == 0 { 0.0 } else { sum / n as f64 })).collect())
}

/// Items by descending score, ties by ItemId.
pub fn rank_by_score(scores: &BTreeMap<ItemId, f64>) -> Vec<ItemId> {
    let mut ranked: Vec<(&ItemId, f64)> = scores.iter().map(|(i, s)| (i, *s)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.into_iter().map(|(i, _)| i.clone()).collect()
}

pub fn aggregate_ranking(assessments: &[SubsetAssessment], set: &CandidateSet) -> Result<Vec<ItemId>> {
    Ok(rank_by_score(&aggregate_scores(assessments, set)?))
}

/// NDCG@K with one relevant item: `1 / log2(rank + 1)` for a 1-based rank
/// within the cutoff, else 0. The ideal DCG is 1.
pub fn ndcg_at_k(ranking: &[ItemId], target: &ItemId, k: usize) -> Result<f64> {
    let position = ranking.iter().position(|i| i == target).ok_or_else(|| Error::TargetNotRanked(target.clone()))?;
    let rank = position + 1;
    Ok(if rank <= k { 1.0 / ((rank + 1) as f64).log2() } else { 0.0 })
}

/// Uniformly shuffled candidates, keyed on (seed, user).
pub fn random_rank(set: &CandidateSet, user: &UserId, seed: u64) -> Vec<ItemId> {
    let mut items = set.items().to_vec();
    items.shuffle(&mut rng_for(seed, &["random_rank", user.as_str()]));
    items
}
