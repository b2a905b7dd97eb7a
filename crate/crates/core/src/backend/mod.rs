//! Chat-completion backends.
//!
//! Every backend answers a [`Conversation`] with a [`Completion`]. The
//! prompt hash is SHA-256 over [`canonical_serialize`], which is also the
//! lookup key for scripted replay.

mod cache;
mod http;
mod retry;
mod scripted;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompts::Conversation;

pub use cache::{cache_key, Cache, CachedBackend};
pub use http::{HttpBackend, RequestStyle};
pub use retry::{RetryPolicy, TokenBucket};
pub use scripted::{ScriptEntry, ScriptedBackend};

/// Separator placed between messages in the canonical serialization.
pub const MESSAGE_SEPARATOR: &str = "\n---\n";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("request timed out (prompt {prompt_hash})")]
    Timeout { prompt_hash: String },
    #[error("rate limited after {attempts} attempts (prompt {prompt_hash})")]
    RateLimited { prompt_hash: String, attempts: u32 },
    #[error("transport error: {message} (prompt {prompt_hash})")]
    Transport { prompt_hash: String, message: String },
    #[error("malformed response: {message} (prompt {prompt_hash})")]
    MalformedResponse { prompt_hash: String, message: String },
    #[error("credential environment variable `{var}` is not set")]
    AuthMissing { var: String },
    #[error("empty conversation")]
    EmptyConversation,
    #[error("cache error: {0}")]
    Cache(String),
    #[error("invalid backend config: {0}")]
    Config(String),
}

impl BackendError {
    /// Whether another attempt could plausibly succeed.
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            BackendError::Timeout { .. } | BackendError::RateLimited { .. } | BackendError::Transport { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    #[default]
    Scripted,
}

/// Backend connection and decoding settings. Holds only the *name* of the
/// credential variable, never its value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint_url: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
    pub max_retries: u32,
    pub requests_per_minute: u32,
    pub api_key_ref: String,
    pub request_style: RequestStyle,
    /// Dotted path to the completion text inside the response JSON.
    pub response_path: String,
    /// Scripted backend response file (JSON Lines of `{hash, response}`).
    pub scripted_path: Option<std::path::PathBuf>,
    /// Response cache directory; no caching when absent.
    pub cache_dir: Option<std::path::PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Scripted,
            endpoint_url: "https://api.openai.com/v1/chat/completions".into(),
            model_id: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            max_tokens: 512,
            timeout: Duration::from_secs(60),
            max_retries: 3,
            requests_per_minute: 60,
            api_key_ref: "OPENAI_API_KEY".into(),
            request_style: RequestStyle::Chat,
            response_path: "choices.0.message.content".into(),
            scripted_path: None,
            cache_dir: None,
        }
    }
}

pub const MAX_RETRIES_LIMIT: u32 = 10;

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if self.max_retries > MAX_RETRIES_LIMIT {
            return Err(BackendError::Config(format!(
                "max_retries must be <= {MAX_RETRIES_LIMIT}, got {}",
                self.max_retries
            )));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::Config("max_tokens must be positive".into()));
        }
        if self.requests_per_minute == 0 {
            return Err(BackendError::Config("requests_per_minute must be positive".into()));
        }
        Ok(())
    }
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub prompt_hash: String,
    pub cached: bool,
    pub latency: Duration,
    pub attempt_count: u32,
}

pub trait Backend: Send + Sync {
    fn model_id(&self) -> &str;

    fn temperature(&self) -> f64 {
        0.0
    }

    fn complete(&self, conv: &Conversation) -> Result<Completion, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn temperature(&self) -> f64 {
        (**self).temperature()
    }

    fn complete(&self, conv: &Conversation) -> Result<Completion, BackendError> {
        (**self).complete(conv)
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn temperature(&self) -> f64 {
        (**self).temperature()
    }

    fn complete(&self, conv: &Conversation) -> Result<Completion, BackendError> {
        (**self).complete(conv)
    }
}

/// `role:content` per message, joined by [`MESSAGE_SEPARATOR`].
///
/// Injective only when no content contains the separator itself.
pub fn canonical_serialize(conv: &Conversation) -> Vec<u8> {
    let parts: Vec<String> = conv
        .messages()
        .iter()
        .map(|m| format!("{}:{}", m.role.as_str(), m.content))
        .collect();
    parts.join(MESSAGE_SEPARATOR).into_bytes()
}

pub fn prompt_hash(conv: &Conversation) -> String {
    hex::encode(Sha256::digest(canonical_serialize(conv)))
}

/// Builds the configured backend, wrapped in a response cache when
/// `cache_dir` is set.
pub fn build_backend(cfg: &BackendConfig) -> Result<Box<dyn Backend>, BackendError> {
    cfg.validate()?;
    let inner: Box<dyn Backend> = match cfg.kind {
        BackendKind::Scripted => {
            let path = cfg
                .scripted_path
                .as_ref()
                .ok_or_else(|| BackendError::Config("scripted backend needs scripted_path".into()))?;
            Box::new(ScriptedBackend::load(path, &cfg.model_id)?)
        }
        BackendKind::Http => Box::new(HttpBackend::new(cfg.clone())?),
    };
    match &cfg.cache_dir {
        Some(dir) => {
            let cache = Cache::open(dir).map_err(|e| BackendError::Cache(e.to_string()))?;
            Ok(Box::new(CachedBackend::new(inner, cache)))
        }
        None => Ok(inner),
    }
}
