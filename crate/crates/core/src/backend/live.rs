use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{AgentReply, AgentRequest, Backend, BackendError, ReplySource};

pub const API_KEY_ENV: &str = "SRLF_API_KEY";
pub const API_BASE_ENV: &str = "SRLF_API_BASE";

const BODY_EXCERPT: usize = 200;

#[derive(Debug, Clone)]
pub struct LiveConfig {
    /// Full URL the request is POSTed to.
    pub endpoint: String,
    pub api_key: String,
    pub model: String,
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl LiveConfig {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            model: model.into(),
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(120),
        }
    }

    /// Reads `SRLF_API_KEY` and `SRLF_API_BASE`. A base that does not already
    /// end in `/chat/completions` gets that path appended.
    pub fn from_env(model: impl Into<String>) -> Result<Self, BackendError> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|v| !v.trim().is_empty())
            .ok_or_else(|| BackendError::Config(format!("{API_KEY_ENV} is not set")))?;
        let base = std::env::var(API_BASE_ENV)
            .ok()
            .filter(|v| !v.trim().is_empty())
            .ok_or_else(|| BackendError::Config(format!("{API_BASE_ENV} is not set")))?;
        Ok(Self::new(endpoint_from_base(&base), key, model))
    }
}

pub(crate) fn endpoint_from_base(base: &str) -> String {
    let trimmed = base.trim().trim_end_matches('/');
    if trimmed.ends_with("/chat/completions") {
        trimmed.to_string()
    } else {
        format!("{trimmed}/chat/completions")
    }
}

/// Chat-completions client: one user message per request, reply read from
/// `choices[0].message.content`.
pub struct LiveBackend {
    config: LiveConfig,
    client: reqwest::blocking::Client,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn body(&self, request: &AgentRequest) -> Value {
        json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.rendered_prompt}],
            "temperature": request.temperature,
        })
    }
}

impl Backend for LiveBackend {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, request: &AgentRequest) -> Result<AgentReply, BackendError> {
        let started = Instant::now();
        let body = self.body(request);
        let attempts = self.config.max_attempts.max(1);
        let mut backoff = self.config.initial_backoff;
        let mut last_error = String::new();

        for attempt in 1..=attempts {
            let sent = self.client.post(&self.config.endpoint).bearer_auth(&self.config.api_key).json(&body).send();
            let response = match sent {
                Ok(response) => response,
                Err(e) => {
                    last_error = e.to_string();
                    tracing::warn!(attempt, "backend request failed: {last_error}");
                    if attempt < attempts {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                    continue;
                }
            };

            let status = response.status();
            let text = response.text().map_err(|e| BackendError::Protocol(format!("unreadable body: {e}")))?;
            if !status.is_success() {
                return Err(BackendError::Http {
                    status: status.as_u16(),
                    body: text.chars().take(BODY_EXCERPT).collect(),
                });
            }
            let value: Value = serde_json::from_str(&text)
                .map_err(|e| BackendError::Protocol(format!("response is not JSON: {e}")))?;
            let content = value
                .pointer("/choices/0/message/content")
                .and_then(Value::as_str)
                .ok_or_else(|| BackendError::Protocol("missing choices[0].message.content".into()))?;
            if content.is_empty() {
                return Err(BackendError::Protocol("empty completion".into()));
            }
            return Ok(AgentReply {
                raw_text: content.to_string(),
                source: ReplySource::Live,
                latency_ms: started.elapsed().as_secs_f64() * 1e3,
            });
        }

        Err(BackendError::Unavailable { attempts, message: last_error })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::{TcpListener, TcpStream};
    use std::sync::mpsc;

    struct Captured {
        head: String,
        body: String,
    }

    /// Serves `responses` in order, one connection each, and reports what it
    /// received.
    fn serve(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<Captured>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let captured = handle(stream, status, &body);
                let _ = tx.send(captured);
            }
        });
        (format!("http://{addr}/v1"), rx)
    }

    fn handle(mut stream: TcpStream, status: u16, body: &str) -> Captured {
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut head = String::new();
        let mut content_length = 0usize;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if line == "\r\n" || line.is_empty() {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                content_length = v.trim().parse().unwrap();
            }
            head.push_str(&line);
        }
        let mut buf = vec![0u8; content_length];
        reader.read_exact(&mut buf).unwrap();
        let reply = format!(
            "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
            body.len()
        );
        stream.write_all(reply.as_bytes()).unwrap();
        Captured { head, body: String::from_utf8(buf).unwrap() }
    }

    fn request() -> AgentRequest {
        AgentRequest {
            template_name: "assess".into(),
            rendered_prompt: "rate these".into(),
            expected_schema: String::new(),
            temperature: 0.0,
        }
    }

    fn backend(base: &str) -> LiveBackend {
        let mut config = LiveConfig::new(endpoint_from_base(base), "sk-test", "model-a");
        config.initial_backoff = Duration::from_millis(5);
        LiveBackend::new(config).unwrap()
    }

    #[test]
    fn posts_chat_completion_and_reads_content() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"{\"scores\":{}}"}}]}"#;
        let (base, rx) = serve(vec![(200, ok.to_string())]);
        let reply = backend(&base).complete(&request()).unwrap();
        assert_eq!(reply.raw_text, r#"{"scores":{}}"#);
        assert_eq!(reply.source, ReplySource::Live);

        let got = rx.recv().unwrap();
        assert!(got.head.starts_with("POST /v1/chat/completions "));
        assert!(got.head.to_ascii_lowercase().contains("authorization: bearer sk-test"));
        let body: Value = serde_json::from_str(&got.body).unwrap();
        assert_eq!(body["model"], "model-a");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "rate these");
    }

    #[test]
    fn non_success_status_carries_excerpt() {
        let long_body = format!("{{\"error\":\"{}\"}}", "x".repeat(500));
        let (base, _rx) = serve(vec![(429, long_body)]);
        match backend(&base).complete(&request()) {
            Err(BackendError::Http { status, body }) => {
                assert_eq!(status, 429);
                assert_eq!(body.chars().count(), BODY_EXCERPT);
                assert!(body.starts_with("{\"error\""));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_content_is_protocol_error() {
        let (base, _rx) = serve(vec![(200, "{\"choices\":[]}".into())]);
        assert!(matches!(backend(&base).complete(&request()), Err(BackendError::Protocol(_))));
    }

    #[test]
    fn unreachable_endpoint_retries_then_gives_up() {
        // Bind then drop to get a port nothing listens on.
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let err = backend(&format!("http://127.0.0.1:{port}")).complete(&request()).unwrap_err();
        assert!(matches!(err, BackendError::Unavailable { attempts: 3, .. }));
        assert!(err.to_string().starts_with("backend unavailable"));
    }

    #[test]
    fn endpoint_normalisation() {
        assert_eq!(endpoint_from_base("http://h/v1/"), "http://h/v1/chat/completions");
        assert_eq!(endpoint_from_base("http://h/v1/chat/completions"), "http://h/v1/chat/completions");
    }
}
