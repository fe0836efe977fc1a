//! Chat-completion access for all agents.
//!
//! [`Gateway::complete`] is cache-first: a warm cache answers without
//! touching the backend. On a miss the configured [`ChatBackend`] (HTTP
//! endpoint, scripted mock, or the network-forbidding [`OfflineBackend`]) is
//! queried under an in-flight cap and optional token-bucket rate limit, with
//! bounded retries on transient failures, and the reply is stored.

mod cache;
mod http;
mod limit;
mod mock;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::sync::Semaphore;

pub use cache::{CacheEntry, DiskCache};
pub use http::{HttpBackend, HttpConfig};
pub use limit::TokenBucket;
pub use mock::{MockBackend, MockLogprob, MockMatch, MockRecord, MockTranscript, Substrings};

pub const DEFAULT_MAX_INFLIGHT: usize = 8;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("malformed backend payload: {0}")]
    Malformed(String),
    #[error("mock transcript has no entry for request {fingerprint}")]
    MockMissing { fingerprint: String },
    #[error("mock transcript exhausted for request {fingerprint}")]
    MockExhausted { fingerprint: String },
    #[error("network access is disabled (request {fingerprint})")]
    Offline { fingerprint: String },
    #[error("response carries no token log-probabilities")]
    MissingLogprobs,
    #[error("cache error at {path}: {message}")]
    Cache { path: String, message: String },
    #[error("gateway configuration: {0}")]
    Config(String),
}

impl GatewayError {
    /// Errors worth retrying: connection problems, throttling, server faults.
    pub fn is_transient(&self) -> bool {
        match self {
            GatewayError::Transport(_) => true,
            GatewayError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default)]
    pub temperature: f64,
    pub want_logprobs: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ChatRequest {
    /// A temperature-0 request, as every pipeline call is.
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        ChatRequest {
            model: model.into(),
            messages,
            temperature: 0.0,
            want_logprobs: false,
            max_tokens: None,
        }
    }

    pub fn with_logprobs(mut self) -> Self {
        self.want_logprobs = true;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        for m in &self.messages {
            if m.role != Role::Assistant && m.content.trim().is_empty() {
                return Err(GatewayError::InvalidRequest(format!("empty {:?} message", m.role)));
            }
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!("temperature {}", self.temperature)));
        }
        if self.max_tokens == Some(0) {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Concatenated message contents, used for prompt-substring matching.
    pub fn prompt_text(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n")
    }

    /// Canonical serialization: keys sorted, contents verbatim.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("request serializes");
        canonical_json(&value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Cache,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    pub backend: BackendKind,
}

impl ChatResponse {
    pub fn confidence(&self) -> Result<f64, GatewayError> {
        confidence(self)
    }
}

/// A reply as produced by a backend, with its raw payload when there is one.
#[derive(Debug, Clone)]
pub struct BackendReply {
    pub response: ChatResponse,
    pub raw: Option<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatExchange {
    pub fingerprint: String,
    pub request: ChatRequest,
    pub response: ChatResponse,
}

/// Sum of token log-probabilities over the whole response.
pub fn confidence(resp: &ChatResponse) -> Result<f64, GatewayError> {
    resp.token_logprobs
        .as_ref()
        .map(|toks| toks.iter().map(|t| t.logprob).sum())
        .ok_or(GatewayError::MissingLogprobs)
}

/// SHA-256 hex digest of the canonical request.
pub fn fingerprint(req: &ChatRequest) -> String {
    hex::encode(Sha256::digest(req.canonical_json().as_bytes()))
}

/// Serializes JSON with object keys sorted at every level.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String((*k).clone()).to_string());
                out.push(':');
                write_canonical(&map[k.as_str()], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(v, out);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    async fn send(&self, req: &ChatRequest, fingerprint: &str) -> Result<BackendReply, GatewayError>;
}

/// A backend that refuses every request. Pair it with a warm cache to
/// prove a run is fully offline.
#[derive(Debug, Default)]
pub struct OfflineBackend {
    attempts: AtomicUsize,
}

impl OfflineBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl ChatBackend for OfflineBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Live
    }

    async fn send(&self, _req: &ChatRequest, fingerprint: &str) -> Result<BackendReply, GatewayError> {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        Err(GatewayError::Offline { fingerprint: fingerprint.to_string() })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy { max_retries: 0, ..Default::default() }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt).unwrap_or(u32::MAX);
        self.initial_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

#[derive(Debug, Default)]
struct Counters {
    cache_hits: AtomicUsize,
    backend_calls: AtomicUsize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct GatewayStats {
    pub cache_hits: usize,
    pub backend_calls: usize,
}

pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    cache: Option<DiskCache>,
    inflight: Semaphore,
    limiter: Option<TokenBucket>,
    retry: RetryPolicy,
    counters: Counters,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Gateway {
            backend,
            cache: None,
            inflight: Semaphore::new(DEFAULT_MAX_INFLIGHT),
            limiter: None,
            retry: RetryPolicy::default(),
            counters: Counters::default(),
        }
    }

    pub fn with_cache(mut self, cache: DiskCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_max_inflight(mut self, n: usize) -> Self {
        self.inflight = Semaphore::new(n.max(1));
        self
    }

    pub fn with_rate_limit(mut self, bucket: TokenBucket) -> Self {
        self.limiter = Some(bucket);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            cache_hits: self.counters.cache_hits.load(Ordering::SeqCst),
            backend_calls: self.counters.backend_calls.load(Ordering::SeqCst),
        }
    }

    pub async fn complete(&self, req: &ChatRequest) -> Result<ChatExchange, GatewayError> {
        req.validate()?;
        let fp = fingerprint(req);

        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.get(&fp)? {
                self.counters.cache_hits.fetch_add(1, Ordering::SeqCst);
                let mut response = entry.response;
                response.backend = BackendKind::Cache;
                return Ok(ChatExchange { fingerprint: fp, request: req.clone(), response });
            }
        }

        let reply = {
            let _permit = self.inflight.acquire().await.expect("semaphore is never closed");
            self.send_with_retries(req, &fp).await?
        };

        if let Some(cache) = &self.cache {
            cache.put(&fp, req, &reply.response, reply.raw.as_ref())?;
        }
        Ok(ChatExchange { fingerprint: fp, request: req.clone(), response: reply.response })
    }

    async fn send_with_retries(&self, req: &ChatRequest, fp: &str) -> Result<BackendReply, GatewayError> {
        let mut attempt = 0;
        loop {
            if let Some(bucket) = &self.limiter {
                bucket.acquire().await;
            }
            self.counters.backend_calls.fetch_add(1, Ordering::SeqCst);
            match self.backend.send(req, fp).await {
                Ok(reply) => return Ok(reply),
                Err(e) if e.is_transient() && attempt < self.retry.max_retries => {
                    let wait = self.retry.backoff(attempt);
                    tracing::warn!(error = %e, attempt, ?wait, "transient backend failure, retrying");
                    tokio::time::sleep(wait).await;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Splits `text` into `n` consecutive non-overlapping pieces whose
/// concatenation is `text` (pieces may be empty when `n` exceeds the
/// character count).
pub(crate) fn split_into_tokens(text: &str, n: usize) -> Vec<String> {
    if n == 0 {
        return Vec::new();
    }
    let chars: Vec<char> = text.chars().collect();
    let len = chars.len();
    (0..n)
        .map(|i| chars[i * len / n..(i + 1) * len / n].iter().collect())
        .collect()
}
