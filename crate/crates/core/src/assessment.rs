//! Set-wise assessment: one agent call per overlapping subset.
//!
//! The agent must reply with a JSON object (the first balanced object in the
//! reply is used) holding a score in [0, 1] for exactly the subset's items, a
//! subset compatibility in [0, 1] and a short rationale. Anything else gets a
//! repair prompt; after [`REPAIR_BUDGET`] failed repairs the subset is marked
//! invalid rather than failing the whole set.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::{AgentRequest, Backend};
use crate::domain::{CandidateSet, ItemDescription, ItemId, Subset, SubsetAssessment, UserProfile};
use crate::partition::{partition, pointwise_subsets, PartitionConfig};
use crate::template::{PromptTemplate, TemplateSet};
use crate::text::first_json_object;
use crate::{Error, Result};

pub const REPAIR_BUDGET: u32 = 3;

/// How a candidate set is split before assessment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AssessmentMode {
    SetWise {
        window_size: usize,
    },
    /// Every item judged alone; no partitioning.
    PointWise,
}

impl AssessmentMode {
    pub fn subsets(&self, set: &CandidateSet) -> Result<Vec<Subset>> {
        match *self {
            AssessmentMode::SetWise { window_size } => partition(set, &PartitionConfig::new(window_size)?),
            AssessmentMode::PointWise => Ok(pointwise_subsets(set)),
        }
    }
}

/// `<item index="1" id="...">description</item>` lines, in subset order.
pub fn render_items(subset: &Subset, descriptions: &BTreeMap<ItemId, ItemDescription>) -> Result<String> {
    let mut lines = Vec::with_capacity(subset.items.len());
    for (offset, item) in subset.items.iter().enumerate() {
        let description = descriptions.get(item).ok_or_else(|| Error::MissingDescription(item.clone()))?;
        lines.push(format!("<item index=\"{}\" id=\"{item}\">{}</item>", offset + 1, description.description_text));
    }
    Ok(lines.join("\n"))
}

pub fn render_assessment_prompt(
    profile: &UserProfile,
    subset: &Subset,
    descriptions: &BTreeMap<ItemId, ItemDescription>,
    template: &PromptTemplate,
) -> Result<AgentRequest> {
    let mut values = BTreeMap::new();
    values.insert("profile", profile.profile_text.clone());
    values.insert("items", render_items(subset, descriptions)?);
    values.insert("schema", template.output_schema.clone());
    AgentRequest::new(template, template.render(&values)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAssessment {
    pub item_scores: BTreeMap<ItemId, f64>,
    pub compatibility: f64,
    pub rationale: String,
}

fn unit_interval(value: &Value, what: &str) -> Result<f64, String> {
    let x = value.as_f64().ok_or_else(|| format!("{what} is not a number"))?;
    if !(0.0..=1.0).contains(&x) {
        return Err(format!("{what} = {x} is outside [0, 1]"));
    }
    Ok(x)
}

/// Parses a reply against a subset; the error is a human-readable problem
/// statement suitable for a repair prompt.
pub fn parse_assessment(reply: &str, subset: &Subset) -> Result<ParsedAssessment, String> {
    let json = first_json_object(reply).ok_or("the reply contains no JSON object")?;
    let value: Value = serde_json::from_str(json).map_err(|e| format!("the JSON is invalid ({e})"))?;
    let scores = value.get("scores").and_then(Value::as_object).ok_or("the object has no \"scores\" map")?;

    let expected: BTreeSet<&str> = subset.items.iter().map(ItemId::as_str).collect();
    let got: BTreeSet<&str> = scores.keys().map(String::as_str).collect();
    if got != expected {
        let missing: Vec<&str> = expected.difference(&got).copied().collect();
        let extra: Vec<&str> = got.difference(&expected).copied().collect();
        return Err(format!(
            "\"scores\" must have exactly the item ids {:?} (missing {missing:?}, unexpected {extra:?})",
            expected
        ));
    }
    let mut item_scores = BTreeMap::new();
    for item in &subset.items {
        let score = unit_interval(&scores[item.as_str()], &format!("score for {item}"))?;
        item_scores.insert(item.clone(), score);
    }
    let compatibility =
        unit_interval(value.get("compatibility").ok_or("the object has no \"compatibility\"")?, "compatibility")?;
    let rationale = match value.get("rationale") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err("\"rationale\" must be a string".into()),
    };
    Ok(ParsedAssessment { item_scores, compatibility, rationale })
}

fn render_repair(
    template: &PromptTemplate,
    original: &AgentRequest,
    reply: &str,
    problem: &str,
) -> Result<AgentRequest> {
    let mut values = BTreeMap::new();
    values.insert("problem", problem.to_string());
    values.insert("reply", reply.to_string());
    values.insert("schema", template.output_schema.clone());
    values.insert("original_prompt", original.rendered_prompt.clone());
    AgentRequest::new(template, template.render(&values)?)
}

/// Assesses one subset, repairing malformed replies up to the budget.
pub fn assess_subset(
    profile: &UserProfile,
    subset: &Subset,
    descriptions: &BTreeMap<ItemId, ItemDescription>,
    templates: &TemplateSet,
    backend: &dyn Backend,
) -> Result<SubsetAssessment> {
    let request = render_assessment_prompt(profile, subset, descriptions, &templates.assess)?;
    let mut reply = backend.complete(&request)?.raw_text;
    let mut repairs = 0;
    loop {
        match parse_assessment(&reply, subset) {
            Ok(parsed) => {
                return Ok(SubsetAssessment {
                    window_index: subset.window_index,
                    items: subset.items.clone(),
                    item_scores: parsed.item_scores,
                    compatibility: Some(parsed.compatibility),
                    rationale: parsed.rationale,
                    valid: true,
                    repairs,
                })
            }
            Err(problem) if repairs >= REPAIR_BUDGET => {
                tracing::warn!(
                    window = subset.window_index,
                    user = %profile.user,
                    "assessment unusable after {repairs} repairs: {problem}"
                );
                return Ok(SubsetAssessment::invalid(subset, repairs, problem));
            }
            Err(problem) => {
                repairs += 1;
                let repair = render_repair(&templates.repair, &request, &reply, &problem)?;
                reply = backend.complete(&repair)?.raw_text;
            }
        }
    }
}

/// Assesses subsets concurrently; output order follows the input order.
pub fn assess_subsets(
    profile: &UserProfile,
    subsets: &[Subset],
    descriptions: &BTreeMap<ItemId, ItemDescription>,
    templates: &TemplateSet,
    backend: &dyn Backend,
) -> Result<Vec<SubsetAssessment>> {
    subsets.par_iter().map(|subset| assess_subset(profile, subset, descriptions, templates, backend)).collect()
}

pub fn assess_candidate_set(
    profile: &UserProfile,
    set: &CandidateSet,
    descriptions: &BTreeMap<ItemId, ItemDescription>,
    config: &PartitionConfig,
    templates: &TemplateSet,
    backend: &dyn Backend,
) -> Result<Vec<SubsetAssessment>> {
    let subsets = partition(set, config)?;
    assess_subsets(profile, &subsets, descriptions, templates, backend)
}
