use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{prompt_hash, Backend, BackendConfig, BackendError, Completion, RetryPolicy, TokenBucket};
use crate::prompts::Conversation;

/// Request body shape.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "style", rename_all = "lowercase")]
pub enum RequestStyle {
    /// OpenAI-style `{"model", "messages", "temperature", "max_tokens"}`.
    #[default]
    Chat,
    /// Text-to-text endpoints: message contents joined by blank lines and
    /// sent under `prompt_field`.
    Text { prompt_field: String },
}

/// Blocking JSON-over-HTTP chat completion client with retry and a shared
/// rate limiter.
pub struct HttpBackend {
    cfg: BackendConfig,
    client: reqwest::blocking::Client,
    limiter: TokenBucket,
    retry: RetryPolicy,
}

impl HttpBackend {
    pub fn new(cfg: BackendConfig) -> Result<Self, BackendError> {
        cfg.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| BackendError::Config(format!("building HTTP client: {e}")))?;
        let limiter = TokenBucket::per_minute(cfg.requests_per_minute);
        let retry = RetryPolicy::with_max_retries(cfg.max_retries);
        Ok(HttpBackend { cfg, client, limiter, retry })
    }

    pub fn with_retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn credential(&self) -> Result<Option<String>, BackendError> {
        if self.cfg.api_key_ref.is_empty() {
            return Ok(None);
        }
        match std::env::var(&self.cfg.api_key_ref) {
            Ok(v) if !v.is_empty() => Ok(Some(v)),
            _ => Err(BackendError::AuthMissing { var: self.cfg.api_key_ref.clone() }),
        }
    }

    pub fn request_body(&self, conv: &Conversation) -> Value {
        match &self.cfg.request_style {
            RequestStyle::Chat => json!({
                "model": self.cfg.model_id,
                "messages": conv.messages(),
                "temperature": self.cfg.temperature,
                "max_tokens": self.cfg.max_tokens,
            }),
            RequestStyle::Text { prompt_field } => {
                let text: Vec<&str> = conv.messages().iter().map(|m| m.content.as_str()).collect();
                let mut body = json!({
                    "model": self.cfg.model_id,
                    "temperature": self.cfg.temperature,
                    "max_tokens": self.cfg.max_tokens,
                });
                body[prompt_field.as_str()] = Value::String(text.join("\n\n"));
                body
            }
        }
    }

    fn attempt(&self, body: &Value, token: Option<&str>, hash: &str) -> Result<String, BackendError> {
        self.limiter.acquire();
        let mut req = self.client.post(&self.cfg.endpoint_url).json(body);
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| classify(e, hash))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| classify(e, hash))?;
        if status.as_u16() == 429 {
            return Err(BackendError::RateLimited { prompt_hash: hash.to_string(), attempts: 1 });
        }
        if status.is_server_error() {
            return Err(BackendError::Transport {
                prompt_hash: hash.to_string(),
                message: format!("HTTP {status}"),
            });
        }
        if !status.is_success() {
            return Err(BackendError::MalformedResponse {
                prompt_hash: hash.to_string(),
                message: format!("HTTP {status}: {}", truncate(&text, 200)),
            });
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| BackendError::MalformedResponse {
            prompt_hash: hash.to_string(),
            message: format!("response is not JSON: {e}"),
        })?;
        lookup_path(&value, &self.cfg.response_path)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::MalformedResponse {
                prompt_hash: hash.to_string(),
                message: format!("no string at `{}`", self.cfg.response_path),
            })
    }
}

fn classify(e: reqwest::Error, hash: &str) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout { prompt_hash: hash.to_string() }
    } else {
        BackendError::Transport { prompt_hash: hash.to_string(), message: e.to_string() }
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Follows a dotted path such as `choices.0.message.content`; numeric
/// segments index arrays.
pub(crate) fn lookup_path<'a>(value: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').filter(|s| !s.is_empty()).try_fold(value, |v, seg| match v {
        Value::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get(i)),
        Value::Object(map) => map.get(seg),
        _ => None,
    })
}

impl Backend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.cfg.model_id
    }

    fn temperature(&self) -> f64 {
        self.cfg.temperature
    }

    fn complete(&self, conv: &Conversation) -> Result<Completion, BackendError> {
        if conv.is_empty() {
            return Err(BackendError::EmptyConversation);
        }
        let hash = prompt_hash(conv);
        let token = self.credential()?;
        let body = self.request_body(conv);
        let start = Instant::now();
        let (text, attempts) = self
            .retry
            .run(|_| self.attempt(&body, token.as_deref(), &hash), std::thread::sleep)?;
        Ok(Completion { text, prompt_hash: hash, cached: false, latency: start.elapsed(), attempt_count: attempts })
    }
}
