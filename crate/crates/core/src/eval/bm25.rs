//! Okapi BM25 over candidate descriptions, queried with the user's history.
//!
//! `idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))` (always positive), and
//! each query token occurrence contributes
//! `idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::rank_by_score;
use crate::domain::ItemId;
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Scores each document against the concatenated query texts. Repeated query
/// tokens count once per occurrence.
pub fn bm25_scores<'a>(
    query_texts: impl IntoIterator<Item = &'a str>,
    documents: &[(ItemId, &str)],
    params: &Bm25Params,
) -> BTreeMap<ItemId, f64> {
    let query: Vec<String> = query_texts.into_iter().flat_map(tokenize).collect();
    let docs: Vec<(ItemId, BTreeMap<String, usize>, usize)> = documents
        .iter()
        .map(|(id, text)| {
            let tokens = tokenize(text);
            let mut tf = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_insert(0) += 1;
            }
            (id.clone(), tf, tokens.len())
        })
        .collect();
    let n = docs.len() as f64;
    let total_len: usize = docs.iter().map(|d| d.2).sum();
    if docs.is_empty() || total_len == 0 {
        return docs.into_iter().map(|(id, _, _)| (id, 0.0)).collect();
    }
    let avgdl = total_len as f64 / n;

    let mut idf: BTreeMap<&str, f64> = BTreeMap::new();
    for term in &query {
        idf.entry(term.as_str()).or_insert_with(|| {
            let df = docs.iter().filter(|d| d.1.contains_key(term)).count() as f64;
            (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
        });
    }

    docs.iter()
        .map(|(id, tf, len)| {
            let norm = params.k1 * (1.0 - params.b + params.b * *len as f64 / avgdl);
            let score = query
                .iter()
                .filter_map(|term| {
                    let f = *tf.get(term)? as f64;
                    Some(idf[term.as_str()] * f * (params.k1 + 1.0) / (f + norm))
                })
                .sum();
            (id.clone(), score)
        })
        .collect()
}

/// Descending BM25 score, ties (including an empty vocabulary) by ItemId.
pub fn bm25_rank<'a>(
    query_texts: impl IntoIterator<Item = &'a str>,
    documents: &[(ItemId, &str)],
    params: &Bm25Params,
) -> Vec<ItemId> {
    rank_by_score(&bm25_scores(query_texts, documents, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iid(s: &str) -> ItemId {
        ItemId::new(s).unwrap()
    }

    #[test]
    fn full_overlap_ranks_first() {
        let docs = [(iid("a"), "metal noise"), (iid("b"), "smooth jazz trio"), (iid("c"), "folk songs")];
        let r = bm25_rank(["jazz trio", "smooth"], &docs, &Bm25Params::default());
        assert_eq!(r[0], iid("b"));
    }

    #[test]
    fn duplicate_documents_tie_by_id() {
        let docs = [(iid("z"), "jazz"), (iid("a"), "jazz"), (iid("m"), "rock")];
        let scores = bm25_scores(["jazz"], &docs, &Bm25Params::default());
        assert_eq!(scores[&iid("z")], scores[&iid("a")]);
        assert_eq!(bm25_rank(["jazz"], &docs, &Bm25Params::default()), vec![iid("a"), iid("z"), iid("m")]);
    }

    #[test]
    fn empty_vocabulary_is_id_order() {
        let docs = [(iid("b"), ""), (iid("a"), "  ")];
        assert_eq!(bm25_rank(["jazz"], &docs, &Bm25Params::default()), vec![iid("a"), iid("b")]);
        let docs = [(iid("b"), "x"), (iid("a"), "y")];
        assert_eq!(bm25_rank(std::iter::empty(), &docs, &Bm25Params::default()), vec![iid("a"), iid("b")]);
    }
}
