//! Per-user leave-one-out evaluation and the metrics report.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{aggregate_ranking, bm25_rank, ndcg_at_k, random_rank, Bm25Params};
use crate::assessment::{assess_subsets, AssessmentMode};
use crate::backend::Backend;
use crate::data::sample_eval_candidates;
use crate::domain::{ItemDescription, ItemId, UserId};
use crate::seed::config_hash;
use crate::template::TemplateSet;
use crate::training::{TrainingData, TrainingState};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub seed: u64,
    pub ks: Vec<usize>,
    /// A report with a larger share of failed users is marked invalid.
    pub max_failure_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { seed: 0, ks: vec![1, 5, 10], max_failure_fraction: 0.1 }
    }
}

/// How a user's candidates get ordered.
#[derive(Clone, Copy)]
pub enum Ranker<'a> {
    /// Agent assessment under the user's (trained) profile and descriptions.
    Agent {
        state: &'a TrainingState,
        base: &'a BTreeMap<ItemId, ItemDescription>,
        mode: AssessmentMode,
        templates: &'a TemplateSet,
        backend: &'a dyn Backend,
    },
    Bm25 {
        base: &'a BTreeMap<ItemId, ItemDescription>,
        params: Bm25Params,
    },
    Random,
    /// The target first; an upper bound for sanity checks.
    Perfect,
}

impl Ranker<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Ranker::Agent { .. } => "agent",
            Ranker::Bm25 { .. } => "bm25",
            Ranker::Random => "random",
            Ranker::Perfect => "perfect",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user: UserId,
    pub target: ItemId,
    pub rank: usize,
    pub ndcg: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub dataset: String,
    pub method: String,
    pub ndcg_at_1: f64,
    pub ndcg_at_5: f64,
    pub ndcg_at_10: f64,
}

const fn row(dataset: &'static str, method: &'static str, v: [f64; 3]) -> (&'static str, &'static str, [f64; 3]) {
    (dataset, method, v)
}

/// Published overall results on the sampled CDs and MovieLens cohorts.
pub const REFERENCE_OVERALL: [(&str, &str, [f64; 3]); 18] = [
    row("CDs_sparse", "BM25", [0.0800, 0.3066, 0.4584]),
    row("CDs_sparse", "BPR", [0.1300, 0.3597, 0.4907]),
    row("CDs_sparse", "SASRec", [0.1900, 0.3948, 0.5308]),
    row("CDs_sparse", "LLMRank", [0.1367, 0.3109, 0.4715]),
    row("CDs_sparse", "AgentCF", [0.1900, 0.3466, 0.5019]),
    row("CDs_sparse", "SRLF", [0.2400, 0.4115, 0.5478]),
    row("CDs_dense", "BM25", [0.0600, 0.2624, 0.4325]),
    row("CDs_dense", "BPR", [0.1300, 0.3485, 0.4812]),
    row("CDs_dense", "SASRec", [0.1300, 0.3151, 0.4676]),
    row("CDs_dense", "LLMRank", [0.1333, 0.3689, 0.4946]),
    row("CDs_dense", "AgentCF", [0.2067, 0.4078, 0.5328]),
    row("CDs_dense", "SRLF", [0.2300, 0.4552, 0.5594]),
    row("MovieLens", "BM25", [0.0980, 0.2102, 0.4067]),
    row("MovieLens", "BPR", [0.0960, 0.2994, 0.4543]),
    row("MovieLens", "SASRec", [0.1128, 0.3346, 0.4742]),
    row("MovieLens", "LLMRank", [0.1180, 0.3773, 0.4917]),
    row("MovieLens", "AgentCF", [0.1720, 0.3903, 0.4966]),
    row("MovieLens", "SRLF", [0.1780, 0.4173, 0.5266]),
];

/// Published ablation results on the dense CDs cohort.
pub const REFERENCE_ABLATION: [(&str, &str, [f64; 3]); 3] = [
    row("CDs_dense", "no_setwise", [0.1500, 0.3811, 0.4965]),
    row("CDs_dense", "no_reflection", [0.1500, 0.3498, 0.5009]),
    row("CDs_dense", "full", [0.2300, 0.4552, 0.5594]),
];

fn reference_rows(table: &[(&str, &str, [f64; 3])]) -> Vec<ReferenceRow> {
    table
        .iter()
        .map(|(dataset, method, v)| ReferenceRow {
            dataset: dataset.to_string(),
            method: method.to_string(),
            ndcg_at_1: v[0],
            ndcg_at_5: v[1],
            ndcg_at_10: v[2],
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub method: String,
    pub config_hash: String,
    pub users: usize,
    pub failures: usize,
    pub valid: bool,
    /// "NDCG@K" → mean over evaluated users.
    pub metrics: BTreeMap<String, f64>,
    pub per_user: Vec<UserMetrics>,
    /// Published numbers for orientation only; nothing is asserted on them.
    pub reference_overall: Vec<ReferenceRow>,
    pub reference_ablation: Vec<ReferenceRow>,
}

fn metric_name(k: usize) -> String {
    format!("NDCG@{k}")
}

fn rank_user(data: &TrainingData, ranker: &Ranker<'_>, config: &EvalConfig, user: &UserId) -> Result<UserMetrics> {
    let split = &data.splits[user];
    let target = &split.target.item;
    let set = sample_eval_candidates(user, target, &split.all_items(), &data.catalog, config.seed)?;
    let ranking = match ranker {
        Ranker::Agent { state, base, mode, templates, backend } => {
            let user_state = state
                .users
                .get(user)
                .ok_or_else(|| Error::invalid("state", format!("no trained state for user {user}")))?;
            let descriptions = user_state.descriptions_for(set.items(), base)?;
            let subsets = mode.subsets(&set)?;
            let assessments = assess_subsets(&user_state.profile, &subsets, &descriptions, templates, *backend)?;
            aggregate_ranking(&assessments, &set)?
        }
        Ranker::Bm25 { base, params } => {
            let description = |id: &ItemId| {
                base.get(id).map(|d| d.description_text.as_str()).ok_or_else(|| Error::MissingDescription(id.clone()))
            };
            let query = split.train.iter().map(|i| description(&i.item)).collect::<Result<Vec<_>>>()?;
            let docs = set.items().iter().map(|id| Ok((id.clone(), description(id)?))).collect::<Result<Vec<_>>>()?;
            bm25_rank(query, &docs, params)
        }
        Ranker::Random => random_rank(&set, user, config.seed),
        Ranker::Perfect => {
            let mut r = vec![target.clone()];
            r.extend(set.items().iter().filter(|i| *i != target).cloned());
            r
        }
    };
    let ndcg = config
        .ks
        .iter()
        .map(|k| Ok((metric_name(*k), ndcg_at_k(&ranking, target, *k)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(UserMetrics {
        user: user.clone(),
        target: target.clone(),
        rank: ranking.iter().position(|i| i == target).map_or(0, |p| p + 1),
        ndcg,
    })
}

/// Evaluates every user in `data`. Failed users are excluded and counted;
/// the fold over users runs in UserId order.
pub fn evaluate(data: &TrainingData, ranker: &Ranker<'_>, config: &EvalConfig, label: &str) -> Result<MetricsReport> {
    if config.ks.is_empty() {
        return Err(Error::invalid("eval config", "no cutoffs given"));
    }
    let users: Vec<&UserId> = data.splits.keys().collect();
    let results: Vec<Result<UserMetrics>> =
        users.par_iter().map(|user| rank_user(data, ranker, config, user)).collect();

    let mut per_user = Vec::new();
    let mut failures = 0;
    for (user, result) in users.iter().zip(results) {
        match result {
            Ok(m) => per_user.push(m),
            Err(e) => {
                tracing::warn!(user = %user, "evaluation failed: {e}");
                failures += 1;
            }
        }
    }
    let mut metrics = BTreeMap::new();
    for k in &config.ks {
        let name = metric_name(*k);
        let mean = if per_user.is_empty() {
            0.0
        } else {
            per_user.iter().map(|m| m.ndcg[&name]).sum::<f64>() / per_user.len() as f64
        };
        metrics.insert(name, mean);
    }
    let valid = !users.is_empty() && failures as f64 <= config.max_failure_fraction * users.len() as f64;
    Ok(MetricsReport {
        label: label.to_string(),
        method: ranker.name().to_string(),
        config_hash: config_hash(&(config, label))?,
        users: per_user.len(),
        failures,
        valid,
        metrics,
        per_user,
        reference_overall: reference_rows(&REFERENCE_OVERALL),
        reference_ablation: reference_rows(&REFERENCE_ABLATION),
    })
}

impl MetricsReport {
    pub fn metric(&self, k: usize) -> Option<f64> {
        self.metrics.get(&metric_name(k)).copied()
    }

    /// One-row table plus the reference block.
    pub fn render(&self) -> String {
        let mut out = render_comparison(std::slice::from_ref(self));
        out.push_str("\nReference (published, not reproduced):\n");
        out.push_str(&render_reference());
        out
    }
}

fn render_rows(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &[String]| -> String {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

/// One row per report; columns are the union of their metrics.
pub fn render_comparison(reports: &[MetricsReport]) -> String {
    let mut columns: Vec<String> = reports.iter().flat_map(|r| r.metrics.keys().cloned()).collect();
    columns.sort_by_key(|c| c.trim_start_matches("NDCG@").parse::<usize>().unwrap_or(usize::MAX));
    columns.dedup();
    let mut header = vec!["Method".to_string()];
    header.extend(columns.iter().cloned());
    header.push("Users".into());
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut row = vec![if r.valid { r.label.clone() } else { format!("{} (invalid)", r.label) }];
            row.extend(columns.iter().map(|c| r.metrics.get(c).map_or("-".into(), |v| format!("{v:.4}"))));
            row.push(r.users.to_string());
            row
        })
        .collect();
    render_rows(&header, &rows)
}

pub fn render_reference() -> String {
    let header: Vec<String> = ["Dataset", "Method", "NDCG@1", "NDCG@5", "NDCG@10"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = REFERENCE_OVERALL
        .iter()
        .chain(REFERENCE_ABLATION.iter())
        .map(|(d, m, v)| {
            let mut row = vec![d.to_string(), m.to_string()];
            row.extend(v.iter().map(|x| format!("{x:.4}")));
            row
        })
        .collect();
    render_rows(&header, &rows)
}
