use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AgentReply, AgentRequest, Backend, BackendError, ReplySource};

/// A canned reply. A rule matches when every condition it sets holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default)]
    pub template: Option<String>,
    #[serde(default)]
    pub contains: Option<String>,
    pub reply: String,
}

impl ScriptRule {
    pub fn for_template(template: impl Into<String>, reply: impl Into<String>) -> Self {
        Self { template: Some(template.into()), contains: None, reply: reply.into() }
    }

    fn matches(&self, request: &AgentRequest) -> bool {
        self.template.as_deref().is_none_or(|t| t == request.template_name)
            && self.contains.as_deref().is_none_or(|c| request.rendered_prompt.contains(c))
    }
}

/// Replays fixed replies; the first matching rule wins. Stateless, so the
/// answer never depends on call order.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    rules: Vec<ScriptRule>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        Self { rules }
    }

    /// Answers every request with `reply`.
    pub fn single(reply: impl Into<String>) -> Self {
        Self::new(vec![ScriptRule { template: None, contains: None, reply: reply.into() }])
    }

    /// One JSON rule per line.
    pub fn from_jsonl(path: &Path) -> Result<Self, BackendError> {
        let file = std::fs::File::open(path).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        let mut rules = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
            if line.trim().is_empty() {
                continue;
            }
            let rule = serde_json::from_str(&line)
                .map_err(|e| BackendError::Config(format!("{} line {}: {e}", path.display(), lineno + 1)))?;
            rules.push(rule);
        }
        Ok(Self::new(rules))
    }
}

impl Backend for ScriptedBackend {
    fn model_id(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &AgentRequest) -> Result<AgentReply, BackendError> {
        self.rules
            .iter()
            .find(|rule| rule.matches(request))
            .map(|rule| AgentReply { raw_text: rule.reply.clone(), source: ReplySource::Scripted, latency_ms: 0.0 })
            .ok_or_else(|| BackendError::NoScript { template: request.template_name.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(template: &str, prompt: &str) -> AgentRequest {
        AgentRequest {
            template_name: template.into(),
            rendered_prompt: prompt.into(),
            expected_schema: String::new(),
            temperature: 0.0,
        }
    }

    #[test]
    fn single_fixture_is_verbatim() {
        let backend = ScriptedBackend::single("  exact\ntext ");
        assert_eq!(backend.complete(&request("x", "y")).unwrap().raw_text, "  exact\ntext ");
    }

    #[test]
    fn first_matching_rule_wins() {
        let backend = ScriptedBackend::new(vec![
            ScriptRule { template: Some("assess".into()), contains: Some("jazz".into()), reply: "A".into() },
            ScriptRule::for_template("assess", "B"),
        ]);
        assert_eq!(backend.complete(&request("assess", "jazz!")).unwrap().raw_text, "A");
        assert_eq!(backend.complete(&request("assess", "metal")).unwrap().raw_text, "B");
        assert!(matches!(backend.complete(&request("repair", "jazz")), Err(BackendError::NoScript { .. })));
    }

    #[test]
    fn loads_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.jsonl");
        std::fs::write(&path, "{\"template\":\"assess\",\"reply\":\"ok\"}\n\n{\"reply\":\"any\"}\n").unwrap();
        let backend = ScriptedBackend::from_jsonl(&path).unwrap();
        assert_eq!(backend.complete(&request("assess", "")).unwrap().raw_text, "ok");
        assert_eq!(backend.complete(&request("other", "")).unwrap().raw_text, "any");
        std::fs::write(&path, "{bad").unwrap();
        assert!(ScriptedBackend::from_jsonl(&path).is_err());
    }
}
