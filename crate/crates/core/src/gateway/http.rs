use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::json;

use super::{
    ChatProvider, ChatRequest, ChatResponse, Embedder, InFlightLimiter, ProviderError, Usage,
    UsageSnapshot,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// First backoff delay; doubles after every failed attempt.
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff_ms: 200,
        }
    }
}

enum AttemptError {
    Transient(String),
    Fatal(ProviderError),
}

struct Transport {
    client: Client,
    api_key: Option<String>,
    retry: RetryPolicy,
    limiter: InFlightLimiter,
}

impl Transport {
    fn new(
        api_key: Option<String>,
        timeout_ms: u64,
        max_in_flight: usize,
        retry: RetryPolicy,
    ) -> Result<Self, ProviderError> {
        let client = Client::builder()
            .timeout(Duration::from_millis(timeout_ms))
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        Ok(Self {
            client,
            api_key,
            retry,
            limiter: InFlightLimiter::new(max_in_flight),
        })
    }

    fn post_once(&self, url: &str, body: &serde_json::Value) -> Result<serde_json::Value, AttemptError> {
        let _permit = self.limiter.acquire();
        let mut req = self.client.post(url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| AttemptError::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| AttemptError::Transient(e.to_string()))?;
        if status.is_success() {
            return serde_json::from_str(&text)
                .map_err(|e| AttemptError::Fatal(ProviderError::MalformedResponse(e.to_string())));
        }
        match status {
            StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => {
                Err(AttemptError::Fatal(ProviderError::AuthError(text)))
            }
            StatusCode::TOO_MANY_REQUESTS | StatusCode::REQUEST_TIMEOUT => {
                Err(AttemptError::Transient(format!("status {status}")))
            }
            s if s.is_server_error() => Err(AttemptError::Transient(format!("status {status}"))),
            s => Err(AttemptError::Fatal(ProviderError::Rejected {
                status: s.as_u16(),
                body: text,
            })),
        }
    }

    /// Posts with retries. Returns the decoded body and the attempts used.
    fn post(&self, url: &str, body: &serde_json::Value) -> Result<(serde_json::Value, u32), (ProviderError, u32)> {
        let max_attempts = self.retry.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=max_attempts {
            match self.post_once(url, body) {
                Ok(v) => return Ok((v, attempt)),
                Err(AttemptError::Fatal(e)) => return Err((e, attempt)),
                Err(AttemptError::Transient(reason)) => {
                    tracing::debug!(url, attempt, %reason, "transient provider failure");
                    last = reason;
                    if attempt < max_attempts {
                        let delay = self.retry.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                }
            }
        }
        Err((
            ProviderError::ProviderUnavailable {
                attempts: max_attempts,
                reason: last,
            },
            max_attempts,
        ))
    }
}

fn endpoint(base_url: &str, path: &str) -> String {
    format!("{}/{}", base_url.trim_end_matches('/'), path)
}

/// Chat-completions client (`POST {base_url}/chat/completions`).
pub struct HttpChat {
    base_url: String,
    model: String,
    transport: Transport,
    usage: Usage,
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<TokenUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct TokenUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl HttpChat {
    pub fn new(
        base_url: String,
        model: String,
        api_key: Option<String>,
        timeout_ms: u64,
        max_in_flight: usize,
        retry: RetryPolicy,
    ) -> Result<Self, ProviderError> {
        Ok(Self {
            base_url,
            model,
            transport: Transport::new(api_key, timeout_ms, max_in_flight, retry)?,
            usage: Usage::default(),
        })
    }
}

impl ChatProvider for HttpChat {
    fn identity(&self) -> String {
        format!("http-chat:{}:{}", self.base_url, self.model)
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let start = Instant::now();
        let (value, attempts) = self
            .transport
            .post(&endpoint(&self.base_url, "chat/completions"), &body)
            .inspect_err(|(_, attempts)| self.usage.record_failure(*attempts))
            .map_err(|(e, _)| e)?;
        let latency_ms = start.elapsed().as_secs_f64() * 1e3;

        let parsed: CompletionBody = serde_json::from_value(value).map_err(|e| {
            self.usage.record_failure(attempts);
            ProviderError::MalformedResponse(e.to_string())
        })?;
        let Some(choice) = parsed.choices.into_iter().next() else {
            self.usage.record_failure(attempts);
            return Err(ProviderError::MalformedResponse("no choices".into()));
        };
        if choice.finish_reason.as_deref() == Some("length") {
            self.usage.record_failure(attempts);
            return Err(ProviderError::ResponseTooLong {
                max_tokens: request.max_tokens,
            });
        }
        let (prompt_tokens, completion_tokens) = parsed
            .usage
            .map(|u| (u.prompt_tokens, u.completion_tokens))
            .unwrap_or((0, 0));
        self.usage
            .record_success(prompt_tokens, completion_tokens, attempts);
        Ok(ChatResponse {
            text: choice.message.content.unwrap_or_default(),
            prompt_tokens,
            completion_tokens,
            latency_ms,
            attempts,
        })
    }

    fn usage(&self) -> UsageSnapshot {
        self.usage.snapshot()
    }
}

/// Embeddings client (`POST {base_url}/embeddings`).
pub struct HttpEmbedder {
    base_url: String,
    model: String,
    dim: Option<usize>,
    transport: Transport,
    usage: Usage,
}

#[derive(Deserialize)]
struct EmbeddingBody {
    data: Vec<EmbeddingItem>,
    #[serde(default)]
    usage: Option<TokenUsage>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    #[serde(default)]
    index: usize,
    embedding: Vec<f32>,
}

impl HttpEmbedder {
    pub fn new(
        base_url: String,
        model: String,
        api_key: Option<String>,
        dim: Option<usize>,
        timeout_ms: u64,
        max_in_flight: usize,
        retry: RetryPolicy,
    ) -> Result<Self, ProviderError> {
        Ok(Self {
            base_url,
            model,
            dim,
            transport: Transport::new(api_key, timeout_ms, max_in_flight, retry)?,
            usage: Usage::default(),
        })
    }
}

impl Embedder for HttpEmbedder {
    fn fingerprint(&self) -> String {
        match self.dim {
            Some(d) => format!("http-embed:{}:{}:dim={d}", self.base_url, self.model),
            None => format!("http-embed:{}:{}", self.base_url, self.model),
        }
    }

    fn dim(&self) -> Option<usize> {
        self.dim
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        let body = json!({ "model": self.model, "input": texts });
        let (value, attempts) = self
            .transport
            .post(&endpoint(&self.base_url, "embeddings"), &body)
            .inspect_err(|(_, attempts)| self.usage.record_failure(*attempts))
            .map_err(|(e, _)| e)?;
        let mut parsed: EmbeddingBody = serde_json::from_value(value)
            .map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
        parsed.data.sort_by_key(|d| d.index);
        let prompt_tokens = parsed.usage.map(|u| u.prompt_tokens).unwrap_or(0);
        self.usage.record_success(prompt_tokens, 0, attempts);
        Ok(parsed.data.into_iter().map(|d| d.embedding).collect())
    }

    fn usage(&self) -> UsageSnapshot {
        self.usage.snapshot()
    }
}
