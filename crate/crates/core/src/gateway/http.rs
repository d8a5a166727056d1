//! OpenAI-compatible `POST /v1/chat/completions` client with retry.

use std::time::Duration;

use serde_json::{json, Value};

use super::{CompletionRequest, GatewayError};

pub const API_KEY_ENV: &str = "POLICYX_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        HttpConfig {
            base_url: base_url.into(),
            api_key: None,
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(120),
        }
    }

    /// Reads the bearer token from `POLICYX_API_KEY`.
    pub fn with_env_key(mut self) -> Self {
        self.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        self
    }

    pub fn endpoint(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/v1") {
            format!("{base}/chat/completions")
        } else {
            format!("{base}/v1/chat/completions")
        }
    }
}

pub(crate) fn request_body(req: &CompletionRequest) -> Value {
    let mut messages = Vec::new();
    if let Some(system) = &req.system_text {
        messages.push(json!({"role": "system", "content": system}));
    }
    messages.push(json!({"role": "user", "content": req.user_text}));
    json!({
        "model": req.model_id,
        "messages": messages,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    })
}

fn parse_content(body: &str) -> Result<String, GatewayError> {
    let value: Value = serde_json::from_str(body)
        .map_err(|e| GatewayError::MalformedResponse(format!("invalid JSON: {e}")))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| GatewayError::MalformedResponse("missing choices[0].message.content".into()))
}

enum Attempt {
    Done(String),
    Transient(String),
    Fatal(GatewayError),
}

pub(crate) struct HttpBackend {
    config: HttpConfig,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub(crate) fn new(config: HttpConfig) -> Result<Self, GatewayError> {
        let api_key = config.api_key.clone().ok_or(GatewayError::AuthMissing)?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpBackend {
            config,
            api_key,
            agent,
        })
    }

    fn attempt(&self, url: &str, body: &Value) -> Attempt {
        let sent = self
            .agent
            .post(url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body);
        let mut response = match sent {
            Ok(r) => r,
            Err(e) => return Attempt::Transient(e.to_string()),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Transient(e.to_string()),
        };
        match status {
            200..=299 => match parse_content(&text) {
                Ok(content) => Attempt::Done(content),
                Err(e) => Attempt::Fatal(e),
            },
            429 | 500..=599 => Attempt::Transient(format!("HTTP {status}")),
            _ => Attempt::Fatal(GatewayError::Rejected { status, body: text }),
        }
    }

    /// Calls `on_attempt` before every network attempt.
    pub(crate) fn complete(
        &self,
        req: &CompletionRequest,
        on_attempt: impl Fn(),
    ) -> Result<String, GatewayError> {
        let url = self.config.endpoint();
        let body = request_body(req);
        let attempts = self.config.max_attempts.max(1);
        let mut last_error = String::new();
        for attempt in 1..=attempts {
            on_attempt();
            match self.attempt(&url, &body) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Transient(reason) => {
                    log::warn!("attempt {attempt}/{attempts} to {url} failed: {reason}");
                    last_error = reason;
                }
            }
            if attempt < attempts {
                std::thread::sleep(self.config.initial_backoff * 2u32.pow(attempt - 1));
            }
        }
        Err(GatewayError::BackendUnavailable {
            attempts,
            last_error,
        })
    }
}
