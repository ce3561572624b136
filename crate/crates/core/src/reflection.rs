//! Dual-path reflection after a triggered mismatch.
//!
//! The profile path always runs. The description path runs for every item the
//! user rejected although most of its windows predicted a match. The paths
//! share no mutable state; the caller commits descriptions before the profile.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{AgentRequest, Backend};
use crate::domain::{
    ItemDescription, ItemId, Label, MismatchReport, ReflectionOutcome, ReflectionPath, Scenario, SubsetAssessment,
    UserProfile,
};
use crate::template::{PromptTemplate, TemplateSet};
use crate::validation::scenario_of;
use crate::{Error, Result};

/// Triggered reports kept as prompt context.
pub const REPORT_CONTEXT: usize = 3;

pub fn scenario_focus(scenario: Scenario) -> &'static str {
    match scenario {
        Scenario::TwoPositive => "every item here was wanted; find what they share that the profile misses",
        Scenario::TwoNegative => "every item here was rejected; find the shared reason the user passed on them",
        Scenario::Mixed => "the user wanted some items and rejected others; find what tells the two groups apart",
    }
}

/// Everything one reflection step reads. Nothing here is mutated.
#[derive(Debug, Clone, Copy)]
pub struct ReflectionContext<'a> {
    pub profile: &'a UserProfile,
    pub assessments: &'a [SubsetAssessment],
    pub labels: &'a BTreeMap<ItemId, Label>,
    pub report: &'a MismatchReport,
    /// Earlier triggered reports for this user, oldest first.
    pub recent_reports: &'a [MismatchReport],
    pub descriptions: &'a BTreeMap<ItemId, ItemDescription>,
    /// Recorded in the refined profile's provenance.
    pub step_ref: &'a str,
}

fn label_of(labels: &BTreeMap<ItemId, Label>, item: &ItemId) -> Result<Label> {
    labels.get(item).copied().ok_or_else(|| Error::UnlabeledItem(item.clone()))
}

fn description_of<'a>(
    descriptions: &'a BTreeMap<ItemId, ItemDescription>,
    item: &ItemId,
) -> Result<&'a ItemDescription> {
    descriptions.get(item).ok_or_else(|| Error::MissingDescription(item.clone()))
}

/// One `<subset>` block per valid window: its scenario, loss, focus, and a
/// `(predicted, truth)` entry per item.
pub fn render_evidence(
    assessments: &[SubsetAssessment],
    labels: &BTreeMap<ItemId, Label>,
    descriptions: &BTreeMap<ItemId, ItemDescription>,
) -> Result<String> {
    let mut blocks = Vec::new();
    for assessment in assessments.iter().filter(|a| a.valid) {
        let scenario = scenario_of(&assessment.items, labels)?;
        let mut loss = 0.0;
        let mut lines = Vec::new();
        for item in &assessment.items {
            let truth = label_of(labels, item)?;
            let predicted = assessment.item_scores.get(item).copied().unwrap_or(0.0);
            loss += (predicted - truth.value()).abs();
            lines.push(format!(
                "<item id=\"{item}\" predicted=\"{predicted}\" truth=\"{}\">{}</item>",
                truth.value(),
                description_of(descriptions, item)?.description_text
            ));
        }
        blocks.push(format!(
            "<subset window=\"{}\" scenario=\"{scenario:?}\" loss=\"{loss:.2}\">\nFocus: {}.\n{}\n</subset>",
            assessment.window_index,
            scenario_focus(scenario),
            lines.join("\n")
        ));
    }
    Ok(blocks.join("\n"))
}

/// Short summary of the last [`REPORT_CONTEXT`] triggered reports.
pub fn render_reports(reports: &[MismatchReport]) -> String {
    let recent: Vec<&MismatchReport> = reports.iter().filter(|r| r.triggered).collect();
    let recent = &recent[recent.len().saturating_sub(REPORT_CONTEXT)..];
    if recent.is_empty() {
        return "none".into();
    }
    recent
        .iter()
        .map(|r| {
            let mut counts: BTreeMap<Scenario, usize> = BTreeMap::new();
            for s in &r.per_subset {
                *counts.entry(s.scenario).or_default() += 1;
            }
            let counts: Vec<String> = counts.iter().map(|(s, n)| format!("{s:?} {n}")).collect();
            format!("loss {:.2} over threshold {:.2}; windows: {}", r.loss, r.threshold, counts.join(", "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn plain_reply(raw: &str) -> Option<String> {
    let text = raw.trim();
    let text = text
        .strip_prefix("```")
        .and_then(|t| t.strip_suffix("```"))
        .map(|t| t.trim_start_matches(|c: char| c.is_ascii_alphanumeric()).trim())
        .unwrap_or(text);
    (!text.is_empty()).then(|| text.to_string())
}

fn request(template: &PromptTemplate, values: BTreeMap<&str, String>) -> Result<AgentRequest> {
    AgentRequest::new(template, template.render(&values)?)
}

/// Rewrites the profile from the evidence. An unusable reply leaves the
/// profile unchanged.
pub fn refine_profile(
    ctx: &ReflectionContext<'_>,
    template: &PromptTemplate,
    backend: &dyn Backend,
) -> Result<UserProfile> {
    let mut values = BTreeMap::new();
    values.insert("profile", ctx.profile.profile_text.clone());
    values.insert("evidence", render_evidence(ctx.assessments, ctx.labels, ctx.descriptions)?);
    values.insert("reports", render_reports(ctx.recent_reports));
    let reply = backend.complete(&request(template, values)?)?;
    match plain_reply(&reply.raw_text) {
        Some(text) if text != ctx.profile.profile_text => ctx.profile.refined(text, ctx.step_ref),
        Some(_) => Ok(ctx.profile.clone()),
        None => {
            tracing::warn!(user = %ctx.profile.user, "empty profile rewrite; keeping version {}", ctx.profile.version);
            Ok(ctx.profile.clone())
        }
    }
}

/// How one item fared in one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPerformance {
    pub window_index: usize,
    pub predicted: f64,
    pub neighbours: Vec<ItemId>,
}

/// Every valid window containing `item`, in window order.
pub fn item_performance(item: &ItemId, assessments: &[SubsetAssessment]) -> Vec<WindowPerformance> {
    let mut out: Vec<WindowPerformance> = assessments
        .iter()
        .filter(|a| a.valid)
        .filter_map(|a| {
            let predicted = *a.item_scores.get(item)?;
            Some(WindowPerformance {
                window_index: a.window_index,
                predicted,
                neighbours: a.items.iter().filter(|i| *i != item).cloned().collect(),
            })
        })
        .collect();
    out.sort_by_key(|p| p.window_index);
    out
}

/// Rejected by the user, predicted a match in most windows, and above 0.5 on
/// average.
pub fn reframing_eligible(performance: &[WindowPerformance], label: Label) -> bool {
    if performance.is_empty() || label.is_positive() {
        return false;
    }
    let disagreeing = performance.iter().filter(|p| (p.predicted - label.value()).abs() > 0.5).count();
    let mean = performance.iter().map(|p| p.predicted).sum::<f64>() / performance.len() as f64;
    2 * disagreeing > performance.len() && mean > 0.5
}

pub fn render_performance(performance: &[WindowPerformance], label: Label) -> String {
    performance
        .iter()
        .map(|p| {
            let neighbours: Vec<&str> = p.neighbours.iter().map(ItemId::as_str).collect();
            format!(
                "<window index=\"{}\" predicted=\"{}\" truth=\"{}\" neighbours=\"{}\"/>",
                p.window_index,
                p.predicted,
                label.value(),
                neighbours.join(", ")
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Rewrites one description from its per-window performance. An unusable
/// reply leaves the description unchanged.
pub fn reframe_description(
    description: &ItemDescription,
    performance: &[WindowPerformance],
    label: Label,
    template: &PromptTemplate,
    backend: &dyn Backend,
) -> Result<ItemDescription> {
    if performance.is_empty() {
        return Err(Error::invalid("reframing", format!("item {} has no valid assessment", description.item)));
    }
    let mut values = BTreeMap::new();
    values.insert("description", description.description_text.clone());
    values.insert("performance", render_performance(performance, label));
    let reply = backend.complete(&request(template, values)?)?;
    match plain_reply(&reply.raw_text) {
        Some(text) if text != description.description_text => description.reframed(text),
        Some(_) => Ok(description.clone()),
        None => {
            tracing::warn!(item = %description.item, "empty description rewrite; keeping version {}", description.version);
            Ok(description.clone())
        }
    }
}

/// Items eligible for reframing, in ItemId order.
pub fn eligible_items(
    assessments: &[SubsetAssessment],
    labels: &BTreeMap<ItemId, Label>,
) -> Result<Vec<(ItemId, Vec<WindowPerformance>)>> {
    let mut items: Vec<&ItemId> = assessments.iter().flat_map(|a| a.items.iter()).collect();
    items.sort();
    items.dedup();
    let mut out = Vec::new();
    for item in items {
        let performance = item_performance(item, assessments);
        if reframing_eligible(&performance, label_of(labels, item)?) {
            out.push((item.clone(), performance));
        }
    }
    Ok(out)
}

/// Runs both paths concurrently. A failing path is recorded in the trace and
/// does not stop the other; only when every attempted call fails is the
/// first error returned.
pub fn reflect(
    ctx: &ReflectionContext<'_>,
    templates: &TemplateSet,
    backend: &dyn Backend,
) -> Result<ReflectionOutcome> {
    if !ctx.report.triggered {
        return Err(Error::invalid("reflection", "the mismatch report is not triggered"));
    }
    let eligible = eligible_items(ctx.assessments, ctx.labels)?;

    let (profile_result, item_results) = rayon::join(
        || refine_profile(ctx, &templates.reflect_user, backend),
        || {
            eligible
                .par_iter()
                .map(|(item, performance)| {
                    let description = description_of(ctx.descriptions, item)?;
                    reframe_description(description, performance, Label::Negative, &templates.reflect_item, backend)
                })
                .collect::<Vec<_>>()
        },
    );

    let mut outcome = ReflectionOutcome {
        new_profile: None,
        reframed_descriptions: Vec::new(),
        paths_taken: Default::default(),
        trace: Vec::new(),
    };
    let mut first_error = None;
    let mut successes = 0;

    for ((item, performance), result) in eligible.iter().zip(item_results) {
        match result {
            Ok(description) => {
                successes += 1;
                outcome.paths_taken.insert(ReflectionPath::ItemReframing);
                let old = ctx.descriptions[item].version;
                if description.version != old {
                    outcome.trace.push(format!(
                        "description {item}: v{old} -> v{} from {} windows",
                        description.version,
                        performance.len()
                    ));
                    outcome.reframed_descriptions.push(description);
                } else {
                    outcome.trace.push(format!("description {item}: unchanged"));
                }
            }
            Err(e) => {
                outcome.trace.push(format!("description {item}: failed: {e}"));
                first_error.get_or_insert(e);
            }
        }
    }

    match profile_result {
        Ok(profile) => {
            successes += 1;
            outcome.paths_taken.insert(ReflectionPath::ProfileRefinement);
            if profile.version != ctx.profile.version {
                outcome.trace.push(format!("profile: v{} -> v{}", ctx.profile.version, profile.version));
                outcome.new_profile = Some(profile);
            } else {
                outcome.trace.push("profile: unchanged".into());
            }
        }
        Err(e) => {
            outcome.trace.push(format!("profile: failed: {e}"));
            first_error.get_or_insert(e);
        }
    }

    match first_error {
        Some(e) if successes == 0 => Err(e),
        _ => Ok(outcome),
    }
}
