//! Text-generation backends behind one blocking interface.
//!
//! * [`LiveBackend`] talks to a chat-completions endpoint over HTTP.
//! * [`ScriptedBackend`] replays canned replies matched by template / prompt.
//! * [`OracleBackend`] is a deterministic simulated agent driven by keyword
//!   weights, for offline experiments.
//! * [`CachedBackend`] wraps any of them with an append-only JSON-lines cache.

mod cache;
mod live;
mod oracle;
mod scripted;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::canonical_json;
use crate::seed::sha256_hex;
use crate::template::PromptTemplate;

pub use cache::{CacheEntry, CacheMode, CachedBackend};
pub use live::{LiveBackend, LiveConfig, API_BASE_ENV, API_KEY_ENV};
pub use oracle::{oracle_tokens, LatentOracleConfig, OracleBackend, ORACLE_MODEL};
pub use scripted::{ScriptRule, ScriptedBackend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRequest {
    pub template_name: String,
    pub rendered_prompt: String,
    pub expected_schema: String,
    pub temperature: f64,
}

impl AgentRequest {
    /// Request at temperature 0 for a prompt rendered from `template`.
    pub fn new(template: &PromptTemplate, rendered_prompt: String) -> crate::Result<Self> {
        if rendered_prompt.trim().is_empty() {
            return Err(crate::Error::invalid("agent request", "rendered prompt is empty"));
        }
        Ok(Self {
            template_name: template.name.clone(),
            rendered_prompt,
            expected_schema: template.output_schema.clone(),
            temperature: 0.0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplySource {
    Live,
    Cache,
    Scripted,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentReply {
    pub raw_text: String,
    pub source: ReplySource,
    pub latency_ms: f64,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unavailable after {attempts} attempts: {message}")]
    Unavailable { attempts: u32, message: String },

    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },

    #[error("malformed backend response: {0}")]
    Protocol(String),

    #[error("no scripted reply matches template {template}")]
    NoScript { template: String },

    #[error("backend does not handle template {0}")]
    Unsupported(String),

    #[error("cache miss in replay-only mode for key {0}")]
    CacheMiss(String),

    #[error("cache error: {0}")]
    Cache(String),

    #[error("backend misconfigured: {0}")]
    Config(String),
}

pub trait Backend: Send + Sync {
    /// Identifier folded into cache keys.
    fn model_id(&self) -> &str;

    fn complete(&self, request: &AgentRequest) -> Result<AgentReply, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn complete(&self, request: &AgentRequest) -> Result<AgentReply, BackendError> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn complete(&self, request: &AgentRequest) -> Result<AgentReply, BackendError> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn complete(&self, request: &AgentRequest) -> Result<AgentReply, BackendError> {
        (**self).complete(request)
    }
}

#[derive(Serialize)]
struct KeyMaterial<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    template: &'a str,
}

/// SHA-256 (hex) of the canonical JSON object
/// `{"model","prompt","temperature","template"}`.
pub fn cache_key(request: &AgentRequest, model: &str) -> String {
    let material = KeyMaterial {
        model,
        prompt: &request.rendered_prompt,
        temperature: request.temperature,
        template: &request.template_name,
    };
    // Serializing plain strings and a finite float cannot fail.
    let json = canonical_json(&material).expect("cache key material serializes");
    sha256_hex(json.as_bytes())
}
