//! Provider contracts for chat completion and text embedding.
//!
//! Everything above this module talks to [`ChatProvider`] and [`Embedder`]
//! trait objects. Two families of implementations ship:
//!
//! - HTTP providers speaking the common chat-completions / embeddings wire
//!   shape (`POST {base_url}/chat/completions`, `POST {base_url}/embeddings`,
//!   bearer auth), with retry and exponential backoff.
//! - Deterministic mocks used by tests, examples and offline runs.
//!
//! Embeddings are always L2-normalized before they leave the gateway, so an
//! inner product between two of them is a cosine similarity.

mod http;
mod limiter;
mod mock;

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpChat, HttpEmbedder, RetryPolicy};
pub use limiter::{InFlightLimiter, Permit};
pub use mock::{MockChat, MockEmbedder, MockRule, MockScript};

pub const DEFAULT_EMBED_DIM: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("provider unavailable after {attempts} attempt(s): {reason}")]
    ProviderUnavailable { attempts: u32, reason: String },
    #[error("response exceeded max_tokens ({max_tokens})")]
    ResponseTooLong { max_tokens: u32 },
    #[error("authentication failed: {0}")]
    AuthError(String),
    #[error("provider rejected request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("embedding dimension mismatch: expected {expected}, got {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("provider configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f32,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature: 0.2,
            max_tokens: 1024,
        }
    }

    pub fn temperature(mut self, t: f32) -> Self {
        self.temperature = t;
        self
    }

    pub fn max_tokens(mut self, n: u32) -> Self {
        self.max_tokens = n;
        self
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.system_prompt.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("empty system prompt".into()));
        }
        if self.user_prompt.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("empty user prompt".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(ProviderError::InvalidRequest("max_tokens must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: f64,
    /// Transport attempts used, including the successful one.
    pub attempts: u32,
}

/// Lock-free usage counters shared by every provider implementation.
#[derive(Debug, Default)]
pub struct Usage {
    calls: AtomicU64,
    failures: AtomicU64,
    retries: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageSnapshot {
    pub calls: u64,
    pub failures: u64,
    pub retries: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl UsageSnapshot {
    pub fn since(&self, earlier: &UsageSnapshot) -> UsageSnapshot {
        UsageSnapshot {
            calls: self.calls - earlier.calls,
            failures: self.failures - earlier.failures,
            retries: self.retries - earlier.retries,
            prompt_tokens: self.prompt_tokens - earlier.prompt_tokens,
            completion_tokens: self.completion_tokens - earlier.completion_tokens,
        }
    }
}

impl Usage {
    pub fn record_success(&self, prompt_tokens: u64, completion_tokens: u64, attempts: u32) {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.retries
            .fetch_add(attempts.saturating_sub(1) as u64, Ordering::Relaxed);
        self.prompt_tokens.fetch_add(prompt_tokens, Ordering::Relaxed);
        self.completion_tokens
            .fetch_add(completion_tokens, Ordering::Relaxed);
    }

    pub fn record_failure(&self, attempts: u32) {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.failures.fetch_add(1, Ordering::Relaxed);
        self.retries
            .fetch_add(attempts.saturating_sub(1) as u64, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> UsageSnapshot {
        UsageSnapshot {
            calls: self.calls.load(Ordering::Relaxed),
            failures: self.failures.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
            prompt_tokens: self.prompt_tokens.load(Ordering::Relaxed),
            completion_tokens: self.completion_tokens.load(Ordering::Relaxed),
        }
    }
}

pub trait ChatProvider: Send + Sync {
    /// Stable description of the provider and its configuration.
    fn identity(&self) -> String;

    /// Transport-level call. Callers use [`ChatProvider::complete`].
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;

    fn usage(&self) -> UsageSnapshot;

    /// Validates the request before anything reaches the transport.
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        self.send(request)
    }
}

/// A dense embedding. Values produced by the gateway are unit-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(pub Vec<f32>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn l2_norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&v| v as f64 * v as f64)
            .sum::<f64>()
            .sqrt()
    }

    /// Scales to unit L2 norm. Vectors already unit-norm to f32 precision
    /// are returned unchanged, which makes this idempotent.
    pub fn normalize(&self) -> Result<EmbeddingVector, ProviderError> {
        let norm = self.l2_norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(ProviderError::ZeroVector);
        }
        if (norm - 1.0).abs() <= 1e-7 {
            return Ok(self.clone());
        }
        Ok(EmbeddingVector(
            self.0.iter().map(|&v| (v as f64 / norm) as f32).collect(),
        ))
    }

    pub fn inner_product(&self, other: &EmbeddingVector) -> f32 {
        dot(&self.0, &other.0)
    }
}

/// Sequential f32 dot product. The index scan and every similarity score use
/// this exact summation order.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub trait Embedder: Send + Sync {
    /// Identifies the model and configuration; persisted with every index.
    fn fingerprint(&self) -> String;

    /// Known output dimension, if the provider declares one up front.
    fn dim(&self) -> Option<usize>;

    /// Raw provider output, one vector per input, not yet normalized.
    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError>;

    fn usage(&self) -> UsageSnapshot;

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::InvalidRequest("no texts to embed".into()));
        }
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(ProviderError::InvalidRequest(format!(
                "text {i} is empty after trim"
            )));
        }
        let raw = self.embed_raw(texts)?;
        if raw.len() != texts.len() {
            return Err(ProviderError::MalformedResponse(format!(
                "{} vectors returned for {} texts",
                raw.len(),
                texts.len()
            )));
        }
        let expected = self.dim().unwrap_or_else(|| raw[0].len());
        raw.into_iter()
            .map(|v| {
                if v.len() != expected {
                    return Err(ProviderError::DimMismatch {
                        expected,
                        found: v.len(),
                    });
                }
                EmbeddingVector(v).normalize()
            })
            .collect()
    }

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let mut v = self.embed(&[text.to_string()])?;
        Ok(v.remove(0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    HttpChat,
    HttpEmbed,
    MockChat,
    MockEmbed,
}

/// One provider block of the workspace configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub max_retries: Option<u32>,
    #[serde(default)]
    pub backoff_ms: Option<u64>,
    #[serde(default)]
    pub seed: u64,
    /// Mock chat canned responses (JSON). Relative to the config file.
    #[serde(default)]
    pub script_path: Option<String>,
    #[serde(default)]
    pub dim: Option<usize>,
    /// Artificial per-call delay for mock providers.
    #[serde(default)]
    pub delay_ms: u64,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_in_flight() -> usize {
    4
}

impl ProviderConfig {
    pub fn mock_chat(seed: u64) -> Self {
        Self::new(ProviderKind::MockChat, seed)
    }

    pub fn mock_embed(seed: u64) -> Self {
        Self::new(ProviderKind::MockEmbed, seed)
    }

    fn new(kind: ProviderKind, seed: u64) -> Self {
        Self {
            kind,
            base_url: None,
            model: None,
            api_key_env: None,
            timeout_ms: default_timeout_ms(),
            max_in_flight: default_max_in_flight(),
            max_retries: None,
            backoff_ms: None,
            seed,
            script_path: None,
            dim: None,
            delay_ms: 0,
        }
    }

    fn retry_policy(&self) -> RetryPolicy {
        let d = RetryPolicy::default();
        RetryPolicy {
            max_retries: self.max_retries.unwrap_or(d.max_retries),
            backoff_ms: self.backoff_ms.unwrap_or(d.backoff_ms),
        }
    }

    fn required(&self, field: Option<&String>, name: &str) -> Result<String, ProviderError> {
        field
            .cloned()
            .ok_or_else(|| ProviderError::Config(format!("{:?} provider needs `{name}`", self.kind)))
    }

    fn api_key(&self) -> Result<Option<String>, ProviderError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| ProviderError::AuthError(format!("environment variable {var} is not set"))),
        }
    }
}

/// Builds a chat provider. `base_dir` resolves relative `script_path`s.
pub fn build_chat(cfg: &ProviderConfig, base_dir: &Path) -> Result<Arc<dyn ChatProvider>, ProviderError> {
    match cfg.kind {
        ProviderKind::MockChat => {
            let script = match &cfg.script_path {
                Some(p) => MockScript::load(&base_dir.join(p))?,
                None => MockScript::default(),
            };
            Ok(Arc::new(
                MockChat::new(cfg.seed)
                    .with_script(script)
                    .with_delay_ms(cfg.delay_ms)
                    .with_max_in_flight(cfg.max_in_flight),
            ))
        }
        ProviderKind::HttpChat => Ok(Arc::new(HttpChat::new(
            cfg.required(cfg.base_url.as_ref(), "base_url")?,
            cfg.required(cfg.model.as_ref(), "model")?,
            cfg.api_key()?,
            cfg.timeout_ms,
            cfg.max_in_flight,
            cfg.retry_policy(),
        )?)),
        other => Err(ProviderError::Config(format!(
            "{other:?} is not a chat provider kind"
        ))),
    }
}

pub fn build_embedder(cfg: &ProviderConfig) -> Result<Arc<dyn Embedder>, ProviderError> {
    match cfg.kind {
        ProviderKind::MockEmbed => Ok(Arc::new(
            MockEmbedder::new(cfg.dim.unwrap_or(DEFAULT_EMBED_DIM), cfg.seed)
                .with_delay_ms(cfg.delay_ms),
        )),
        ProviderKind::HttpEmbed => Ok(Arc::new(HttpEmbedder::new(
            cfg.required(cfg.base_url.as_ref(), "base_url")?,
            cfg.required(cfg.model.as_ref(), "model")?,
            cfg.api_key()?,
            cfg.dim,
            cfg.timeout_ms,
            cfg.max_in_flight,
            cfg.retry_policy(),
        )?)),
        other => Err(ProviderError::Config(format!(
            "{other:?} is not an embedding provider kind"
        ))),
    }
}

/// Whitespace token count used for usage accounting of mock providers.
pub(crate) fn approx_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}
