//! Chat-completion provider abstraction.
//!
//! Every LLM-backed feature (batch classification, similar-phrase
//! suggestion, description rephrasing) talks to an [`LlmProvider`] through a
//! single system-message + user-message exchange. [`HttpChatProvider`]
//! speaks the OpenAI-compatible `/chat/completions` wire format;
//! [`crate::prompts::MockProvider`] is the deterministic test double.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    /// Caller-side label (e.g. the prompt id). Never sent over the wire.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

impl ChatRequest {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        ChatRequest {
            system: system.into(),
            user: user.into(),
            tag: None,
        }
    }

    pub fn tagged(mut self, tag: impl Into<String>) -> Self {
        self.tag = Some(tag.into());
        self
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("provider timed out")]
    Timeout,
    #[error("provider unreachable: {0}")]
    Unreachable(String),
    #[error("provider returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("unexpected provider response: {0}")]
    BadResponse(String),
    #[error("api key variable `{0}` is not set")]
    MissingKey(String),
}

impl ProviderError {
    fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Timeout | ProviderError::Unreachable(_) => true,
            ProviderError::Http { status, .. } => *status == 429 || *status >= 500,
            ProviderError::BadResponse(_) | ProviderError::MissingKey(_) => false,
        }
    }
}

pub trait LlmProvider: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmProviderConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub batch_size: usize,
    pub max_parallel: usize,
    pub seed: Option<u64>,
}

impl Default for LlmProviderConfig {
    fn default() -> Self {
        LlmProviderConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4-1106-preview".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60,
            max_retries: 2,
            batch_size: 10,
            max_parallel: 4,
            seed: Some(0),
        }
    }
}

impl LlmProviderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("batch_size must be at least 1".into());
        }
        if self.max_parallel == 0 {
            return Err("max_parallel must be at least 1".into());
        }
        Ok(())
    }
}

/// JSON body of a chat-completion request. Temperature is pinned to 0.
pub fn chat_request_body(model: &str, request: &ChatRequest, seed: Option<u64>) -> Value {
    let mut body = json!({
        "model": model,
        "messages": [
            {"role": "system", "content": request.system},
            {"role": "user", "content": request.user},
        ],
        "temperature": 0,
    });
    if let Some(seed) = seed {
        body["seed"] = json!(seed);
    }
    body
}

/// Pulls the first choice's message text out of a chat-completion response.
pub fn extract_completion_text(body: &Value) -> Result<String, ProviderError> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| {
            ProviderError::BadResponse("missing choices[0].message.content".into())
        })
}

pub struct HttpChatProvider {
    config: LlmProviderConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    backoff: Duration,
}

impl HttpChatProvider {
    /// Reads the API key from the configured environment variable. A missing
    /// variable is tolerated for keyless local endpoints.
    pub fn new(config: LlmProviderConfig) -> Self {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        HttpChatProvider {
            config,
            agent,
            api_key,
            backoff: Duration::from_millis(500),
        }
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn config(&self) -> &LlmProviderConfig {
        &self.config
    }

    fn attempt(&self, body: &Value) -> Result<String, ProviderError> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(map_transport_error)?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(map_transport_error)?;
        if !(200..300).contains(&status) {
            return Err(ProviderError::Http { status, body: text });
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        extract_completion_text(&value)
    }
}

fn map_transport_error(e: ureq::Error) -> ProviderError {
    match e {
        ureq::Error::Timeout(_) => ProviderError::Timeout,
        other => ProviderError::Unreachable(other.to_string()),
    }
}

impl LlmProvider for HttpChatProvider {
    fn id(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let body = chat_request_body(&self.config.model, request, self.config.seed);
        let mut delay = self.backoff;
        let mut tries = 0;
        loop {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(e) if e.is_retryable() && tries < self.config.max_retries => {
                    log::warn!("provider attempt {} failed: {e}; retrying", tries + 1);
                    tries += 1;
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Strips a surrounding Markdown code fence, if any.
pub(crate) fn strip_code_fence(raw: &str) -> &str {
    let trimmed = raw.trim();
    if let Some(rest) = trimmed.strip_prefix("```") {
        let rest = rest.split_once('\n').map(|(_, body)| body).unwrap_or("");
        return rest.trim_end().strip_suffix("```").unwrap_or(rest).trim();
    }
    trimmed
}

/// Yields every JSON value that parses starting at an opening `{` or `[`
/// inside free text, in position order.
pub(crate) fn embedded_json_values(raw: &str) -> impl Iterator<Item = Value> + '_ {
    raw.char_indices()
        .filter(|(_, c)| *c == '{' || *c == '[')
        .filter_map(move |(i, _)| {
            serde_json::Deserializer::from_str(&raw[i..])
                .into_iter::<Value>()
                .next()
                .and_then(Result::ok)
        })
}
