//! Deterministic stand-in for both the LLM and the user.
//!
//! As an *agent* it reads the prompts rendered from the shipped templates:
//!
//! * `assess` / `repair`: the profile is read as keyword weights (explicit
//!   `keyword (+0.40)` lines, or plain mentions worth a small positive weight
//!   each). An item's preference is `max(0, tanh(4 * w·d))` over the distinct
//!   keywords `d` of its description, plus optional uniform noise keyed on
//!   (prompt, item) and an optional offset shared by every item of one
//!   prompt, clipped to [0, 1] and rounded to two decimals.
//! * `reflect_user`: a perceptron-style update. Every evidenced item moves the
//!   weights of its description keywords by `0.3 * (truth - predicted)`, the
//!   error averaged over the windows it appears in; the
//!   reply is the updated weights as explicit lines.
//! * `reflect_item`: appends a `Caution:` note recording how often the item
//!   was turned down; a description carrying the note scores at 40%.
//!
//! As the *user*, [`LatentOracleConfig`] holds each user's hidden keyword
//! weights, which the synthetic fixture generator uses to draw histories.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{AgentReply, AgentRequest, Backend, BackendError, ReplySource};
use crate::domain::UserId;
use crate::seed::derive_seed;
use crate::template::{ASSESS, REFLECT_ITEM, REFLECT_USER, REPAIR};
use crate::text::tokenize;

pub const ORACLE_MODEL: &str = "latent-oracle";

const GAIN: f64 = 4.0;
const MENTION_WEIGHT: f64 = 0.15;
const LEARNING_RATE: f64 = 0.3;
const CAUTION_FACTOR: f64 = 0.4;
const CAUTION_PREFIX: &str = "Caution:";
const PROFILE_HEADING: &str = "Preference weights inferred from feedback:";

#[rustfmt::skip]
const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "by", "categories", "for", "from", "in", "is", "it", "of",
    "on", "or", "the", "this", "to", "with",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentOracleConfig {
    /// Hidden keyword → weight in [-1, 1], per user.
    pub users: BTreeMap<UserId, BTreeMap<String, f64>>,
    pub noise_seed: u64,
    /// Probability that a simulated interaction ignores the hidden weights.
    pub flip_probability: f64,
    /// Half-width of the uniform noise added to every assessed score.
    #[serde(default)]
    pub assessment_noise: f64,
    /// Half-width of a uniform offset shared by all scores of one prompt.
    #[serde(default)]
    pub prompt_bias: f64,
}

impl LatentOracleConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(0.0..1.0).contains(&self.flip_probability) {
            return Err(BackendError::Config(format!(
                "flip_probability must be in [0, 1), got {}",
                self.flip_probability
            )));
        }
        for (name, value) in [("assessment_noise", self.assessment_noise), ("prompt_bias", self.prompt_bias)] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(BackendError::Config(format!("{name} must be >= 0")));
            }
        }
        for (user, weights) in &self.users {
            if let Some((k, w)) = weights.iter().find(|(_, w)| !(-1.0..=1.0).contains(*w)) {
                return Err(BackendError::Config(format!("weight for {k} of user {user} is {w}, outside [-1, 1]")));
            }
        }
        Ok(())
    }

    /// Hidden utility of a text for `user`: the sum of weights of its
    /// distinct keywords.
    pub fn utility(&self, user: &UserId, text: &str) -> f64 {
        let Some(weights) = self.users.get(user) else {
            return 0.0;
        };
        oracle_tokens(text).iter().filter_map(|t| weights.get(t)).sum()
    }

    /// A profile that states the user's hidden weights exactly.
    pub fn profile_text(&self, user: &UserId) -> Option<String> {
        self.users.get(user).map(render_weights)
    }
}

/// Distinct lowercase keywords the oracle reads from a text. `Caution:` lines
/// are notes, not content, and are skipped.
pub fn oracle_tokens(text: &str) -> BTreeSet<String> {
    text.lines()
        .filter(|line| !line.trim_start().starts_with(CAUTION_PREFIX))
        .flat_map(tokenize)
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

fn render_weights(weights: &BTreeMap<String, f64>) -> String {
    let mut text = String::from(PROFILE_HEADING);
    for (keyword, weight) in weights {
        if weight.abs() >= 0.005 {
            text.push_str(&format!("\n{keyword} ({weight:+.2})"));
        }
    }
    text
}

fn parse_weight_line(line: &str) -> Option<(String, f64)> {
    let inner = line.strip_suffix(')')?;
    let (keyword, number) = inner.rsplit_once(" (")?;
    if keyword.is_empty() || keyword.contains(char::is_whitespace) {
        return None;
    }
    let weight: f64 = number.parse().ok()?;
    weight.is_finite().then(|| (keyword.to_lowercase(), weight))
}

/// Keyword weights implied by a profile text.
fn profile_weights(profile: &str) -> BTreeMap<String, f64> {
    let mut explicit = BTreeMap::new();
    let mut mentioned: BTreeMap<String, f64> = BTreeMap::new();
    for line in profile.lines().map(str::trim) {
        if line.is_empty() || line.ends_with(':') {
            continue;
        }
        if let Some((keyword, weight)) = parse_weight_line(line) {
            explicit.insert(keyword, weight.clamp(-1.0, 1.0));
            continue;
        }
        for token in tokenize(line) {
            if !STOPWORDS.contains(&token.as_str()) {
                *mentioned.entry(token).or_default() += MENTION_WEIGHT;
            }
        }
    }
    for (token, weight) in mentioned {
        explicit.entry(token).or_insert(weight.min(1.0));
    }
    explicit
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn between<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = text.find(open)? + open.len();
    let len = text[start..].find(close)?;
    Some(text[start..start + len].trim_matches('\n'))
}

fn attr<'a>(tag: &'a str, name: &str) -> Option<&'a str> {
    let needle = format!(" {name}=\"");
    let start = tag.find(&needle)? + needle.len();
    let len = tag[start..].find('"')?;
    Some(&tag[start..start + len])
}

/// `<tag attrs>content</tag>` elements in document order, as (attrs, content).
fn elements<'a>(text: &'a str, tag: &str) -> Vec<(&'a str, &'a str)> {
    let open = format!("<{tag} ");
    let close = format!("</{tag}>");
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find(&open) {
        let after = &rest[start..];
        let Some(head_end) = after.find('>') else {
            break;
        };
        let head = &after[..head_end];
        let body = &after[head_end + 1..];
        let Some(body_end) = body.find(&close) else {
            break;
        };
        out.push((head, &body[..body_end]));
        rest = &body[body_end + close.len()..];
    }
    out
}

/// Self-closing `<tag .../>` elements, returning their attribute text.
fn empty_elements<'a>(text: &'a str, tag: &str) -> Vec<&'a str> {
    let open = format!("<{tag} ");
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find(&open) {
        let after = &rest[start..];
        let Some(end) = after.find("/>") else { break };
        out.push(&after[..end]);
        rest = &after[end + 2..];
    }
    out
}

#[derive(Debug, Clone)]
pub struct OracleBackend {
    config: LatentOracleConfig,
}

impl OracleBackend {
    pub fn new(config: LatentOracleConfig) -> Result<Self, BackendError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &LatentOracleConfig {
        &self.config
    }

    fn unsupported(template: &str) -> BackendError {
        BackendError::Unsupported(format!("{template} prompt not in the expected layout"))
    }

    /// Uniform in [-1, 1), keyed on the noise seed and `parts`.
    fn unit_noise(&self, parts: &[&str]) -> f64 {
        let bits = derive_seed(self.config.noise_seed, parts) >> 11;
        2.0 * (bits as f64 / (1u64 << 53) as f64) - 1.0
    }

    fn noise(&self, prompt: &str, item: &str) -> f64 {
        let mut noise = 0.0;
        if self.config.assessment_noise > 0.0 {
            noise += self.config.assessment_noise * self.unit_noise(&[prompt, item]);
        }
        if self.config.prompt_bias > 0.0 {
            noise += self.config.prompt_bias * self.unit_noise(&[prompt]);
        }
        noise
    }

    fn item_score(&self, weights: &BTreeMap<String, f64>, description: &str, noise: f64) -> f64 {
        let dot: f64 = oracle_tokens(description).iter().filter_map(|t| weights.get(t)).sum();
        let mut score = (GAIN * dot).tanh().max(0.0);
        if description.lines().any(|l| l.trim_start().starts_with(CAUTION_PREFIX)) {
            score *= CAUTION_FACTOR;
        }
        round2((score + noise).clamp(0.0, 1.0))
    }

    fn assess(&self, prompt: &str, template: &str) -> Result<String, BackendError> {
        let task = match template {
            REPAIR => {
                between(prompt, "<original_task>", "</original_task>").ok_or_else(|| Self::unsupported(template))?
            }
            _ => prompt,
        };
        let profile = between(task, "<profile>", "</profile>").ok_or_else(|| Self::unsupported(template))?;
        let items_block = between(task, "<items>", "</items>").ok_or_else(|| Self::unsupported(template))?;
        let items = elements(items_block, "item");
        if items.is_empty() {
            return Err(Self::unsupported(template));
        }
        let weights = profile_weights(profile);
        let mut scores = serde_json::Map::new();
        let mut total = 0.0;
        for (head, description) in &items {
            let id = attr(head, "id").ok_or_else(|| Self::unsupported(template))?;
            let score = self.item_score(&weights, description, self.noise(task, id));
            total += score;
            scores.insert(id.to_string(), json!(score));
        }
        let compatibility = round2(total / items.len() as f64);
        Ok(json!({
            "scores": scores,
            "compatibility": compatibility,
            "rationale": "Scores follow how strongly each description overlaps the weighted profile."
        })
        .to_string())
    }

    fn reflect_user(&self, prompt: &str) -> Result<String, BackendError> {
        let profile = between(prompt, "<profile>", "</profile>").ok_or_else(|| Self::unsupported(REFLECT_USER))?;
        let evidence = between(prompt, "<evidence>", "</evidence>").ok_or_else(|| Self::unsupported(REFLECT_USER))?;
        let mut weights = profile_weights(profile);
        // Items seen in several windows are judged once, on their mean error.
        let mut errors: BTreeMap<&str, (f64, usize, &str)> = BTreeMap::new();
        for (head, description) in elements(evidence, "item") {
            let (Some(id), Some(predicted), Some(truth)) = (
                attr(head, "id"),
                attr(head, "predicted").and_then(|v| v.parse::<f64>().ok()),
                attr(head, "truth").and_then(|v| v.parse::<f64>().ok()),
            ) else {
                return Err(Self::unsupported(REFLECT_USER));
            };
            let entry = errors.entry(id).or_insert((0.0, 0, description));
            entry.0 += truth - predicted;
            entry.1 += 1;
        }
        for (sum, n, description) in errors.into_values() {
            let error = sum / n as f64;
            if error == 0.0 {
                continue;
            }
            for token in oracle_tokens(description) {
                let w = weights.entry(token).or_default();
                *w = (*w + LEARNING_RATE * error).clamp(-1.0, 1.0);
            }
        }
        Ok(render_weights(&weights))
    }

    fn reflect_item(&self, prompt: &str) -> Result<String, BackendError> {
        let description =
            between(prompt, "<description>", "</description>").ok_or_else(|| Self::unsupported(REFLECT_ITEM))?;
        let performance =
            between(prompt, "<performance>", "</performance>").ok_or_else(|| Self::unsupported(REFLECT_ITEM))?;
        let windows = empty_elements(performance, "window");
        if windows.is_empty() {
            return Err(Self::unsupported(REFLECT_ITEM));
        }
        let rejected = windows
            .iter()
            .filter(|w| {
                let predicted = attr(w, "predicted").and_then(|v| v.parse::<f64>().ok()).unwrap_or(0.0);
                attr(w, "truth") == Some("0") && predicted > 0.5
            })
            .count();
        let body: Vec<&str> = description.lines().filter(|l| !l.trim_start().starts_with(CAUTION_PREFIX)).collect();
        Ok(format!(
            "{}\n{CAUTION_PREFIX} turned down in {rejected} of {} contexts where it looked like a match.",
            body.join("\n"),
            windows.len()
        ))
    }
}

impl Backend for OracleBackend {
    fn model_id(&self) -> &str {
        ORACLE_MODEL
    }

    fn complete(&self, request: &AgentRequest) -> Result<AgentReply, BackendError> {
        let started = Instant::now();
        let prompt = &request.rendered_prompt;
        let raw_text = match request.template_name.as_str() {
            ASSESS | REPAIR => self.assess(prompt, &request.template_name)?,
            REFLECT_USER => self.reflect_user(prompt)?,
            REFLECT_ITEM => self.reflect_item(prompt)?,
            other => return Err(BackendError::Unsupported(other.to_string())),
        };
        Ok(AgentReply { raw_text, source: ReplySource::Oracle, latency_ms: started.elapsed().as_secs_f64() * 1e3 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(noise: f64) -> LatentOracleConfig {
        let mut weights = BTreeMap::new();
        weights.insert("jazz".to_string(), 0.9);
        weights.insert("metal".to_string(), -0.6);
        LatentOracleConfig {
            users: [(UserId::new("u1").unwrap(), weights)].into_iter().collect(),
            noise_seed: 11,
            flip_probability: 0.05,
            assessment_noise: noise,
            prompt_bias: 0.0,
        }
    }

    fn request(template: &str, prompt: String) -> AgentRequest {
        AgentRequest {
            template_name: template.into(),
            rendered_prompt: prompt,
            expected_schema: String::new(),
            temperature: 0.0,
        }
    }

    fn assess_prompt(profile: &str, items: &[(&str, &str)]) -> String {
        let block: Vec<String> = items
            .iter()
            .enumerate()
            .map(|(i, (id, d))| format!("<item index=\"{}\" id=\"{id}\">{d}</item>", i + 1))
            .collect();
        format!("x\n<profile>\n{profile}\n</profile>\n<items>\n{}\n</items>\n", block.join("\n"))
    }

    #[test]
    fn weight_lines_and_mentions() {
        let w = profile_weights("Heading:\njazz (+0.90)\nmetal (-0.40)\n- Blue Jazz Nights [jazz]");
        assert_eq!(w["jazz"], 0.9);
        assert_eq!(w["metal"], -0.4);
        assert!((w["blue"] - MENTION_WEIGHT).abs() < 1e-12);
        assert!(!w.contains_key("heading"));
        assert_eq!(parse_weight_line("two words (+0.1)"), None);
    }

    #[test]
    fn jazz_beats_metal() {
        // Hand oracle: w·d = 0.9 for the jazz item, 0 for the metal item
        // (the profile carries no metal weight), so the signs are + and 0.
        let oracle = OracleBackend::new(config(0.0)).unwrap();
        let prompt = assess_prompt(
            "jazz (+0.90)",
            &[("j", "Kind of Blue | categories: jazz"), ("m", "Master | categories: metal")],
        );
        let reply = oracle.complete(&request(ASSESS, prompt)).unwrap();
        let value: serde_json::Value = serde_json::from_str(&reply.raw_text).unwrap();
        assert_eq!(value["scores"]["j"], 1.0);
        assert_eq!(value["scores"]["m"], 0.0);
        assert_eq!(value["compatibility"], 0.5);
    }

    #[test]
    fn deterministic_with_noise() {
        let oracle = OracleBackend::new(config(0.3)).unwrap();
        let req = request(ASSESS, assess_prompt("jazz (+0.20)", &[("a", "jazz"), ("b", "folk")]));
        let outputs: BTreeSet<String> = (0..1000).map(|_| oracle.complete(&req).unwrap().raw_text).collect();
        assert_eq!(outputs.len(), 1);
    }

    #[test]
    fn prompt_bias_is_shared_within_a_prompt() {
        let mut cfg = config(0.0);
        cfg.prompt_bias = 0.2;
        let oracle = OracleBackend::new(cfg).unwrap();
        // Mid-range scores so the offset is never clipped.
        let profile = "jazz (+0.10)\nfolk (+0.05)";
        let mut offsets = BTreeSet::new();
        for n in 0..20 {
            let prompt = assess_prompt(profile, &[(&format!("a{n}"), "jazz"), (&format!("b{n}"), "folk")]);
            let reply = oracle.complete(&request(ASSESS, prompt)).unwrap();
            let v: serde_json::Value = serde_json::from_str(&reply.raw_text).unwrap();
            let a = v["scores"][format!("a{n}")].as_f64().unwrap();
            let b = v["scores"][format!("b{n}")].as_f64().unwrap();
            let clean_a = round2((GAIN * 0.1f64).tanh());
            let clean_b = round2((GAIN * 0.05f64).tanh());
            assert!(((a - clean_a) - (b - clean_b)).abs() <= 0.011, "{a} {b}");
            assert!((a - clean_a).abs() <= 0.205);
            offsets.insert(((a - clean_a) * 100.0).round() as i64);
        }
        assert!(offsets.len() > 1);
    }

    #[test]
    fn refinement_moves_weights_toward_truth() {
        let oracle = OracleBackend::new(config(0.0)).unwrap();
        let prompt = "<profile>\njazz (+0.50)\n</profile>\n<evidence>\n<subset window=\"1\" scenario=\"Mixed\">\n\
             <item id=\"a\" predicted=\"0.00\" truth=\"1\">Folk Songs | categories: folk</item>\n\
             <item id=\"b\" predicted=\"1.00\" truth=\"0\">Jazz Metal | categories: metal</item>\n</subset>\n</evidence>";
        let reply = oracle.complete(&request(REFLECT_USER, prompt.into())).unwrap();
        let w = profile_weights(&reply.raw_text);
        assert!(reply.raw_text.starts_with(PROFILE_HEADING));
        assert!((w["folk"] - 0.3).abs() < 1e-9);
        assert!((w["songs"] - 0.3).abs() < 1e-9);
        assert!((w["jazz"] - 0.2).abs() < 1e-9);
        assert!((w["metal"] + 0.3).abs() < 1e-9);
    }

    #[test]
    fn reframing_adds_single_caution_line() {
        let oracle = OracleBackend::new(config(0.0)).unwrap();
        let prompt = "<description>\nJazz Live\nCaution: old note\n</description>\n<performance>\n\
             <window index=\"1\" predicted=\"0.90\" truth=\"0\"/>\n<window index=\"2\" predicted=\"0.40\" truth=\"0\"/>\n</performance>";
        let reply = oracle.complete(&request(REFLECT_ITEM, prompt.into())).unwrap();
        assert_eq!(reply.raw_text, "Jazz Live\nCaution: turned down in 1 of 2 contexts where it looked like a match.");
        let weights = profile_weights("jazz (+0.90)");
        assert_eq!(oracle.item_score(&weights, "Jazz Live", 0.0), 1.0);
        assert_eq!(oracle.item_score(&weights, &reply.raw_text, 0.0), 0.4);
    }

    #[test]
    fn hidden_utility_and_profile() {
        let cfg = config(0.0);
        let u = UserId::new("u1").unwrap();
        assert!((cfg.utility(&u, "Jazz and Metal") - 0.3).abs() < 1e-12);
        assert_eq!(cfg.profile_text(&u).unwrap(), format!("{PROFILE_HEADING}\njazz (+0.90)\nmetal (-0.60)"));
        let mut bad = cfg.clone();
        bad.flip_probability = 1.0;
        assert!(OracleBackend::new(bad).is_err());
    }

    #[test]
    fn unknown_layout_is_rejected() {
        let oracle = OracleBackend::new(config(0.0)).unwrap();
        assert!(matches!(oracle.complete(&request(ASSESS, "no markers".into())), Err(BackendError::Unsupported(_))));
        assert!(oracle.complete(&request("summarise", "x".into())).is_err());
    }
}
