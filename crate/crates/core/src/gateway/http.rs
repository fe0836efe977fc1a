//! OpenAI-compatible chat-completions endpoint.

use std::time::Duration;

use async_trait::async_trait;
use serde_json::{json, Value};

use super::{BackendKind, BackendReply, ChatBackend, ChatRequest, ChatResponse, GatewayError, TokenLogprob};

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    /// Name of the environment variable holding the API key; `None` for
    /// endpoints that need no authentication.
    pub api_key_env: Option<String>,
    pub timeout: Duration,
}

pub struct HttpBackend {
    client: reqwest::Client,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(cfg: &HttpConfig) -> Result<Self, GatewayError> {
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                GatewayError::Auth(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let client = reqwest::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(HttpBackend { client, endpoint: cfg.endpoint.clone(), api_key })
    }
}

pub(crate) fn request_body(req: &ChatRequest) -> Value {
    let mut body = json!({
        "model": req.model,
        "messages": req.messages,
        "temperature": req.temperature,
        "logprobs": req.want_logprobs,
    });
    if let Some(n) = req.max_tokens {
        body["max_tokens"] = json!(n);
    }
    body
}

/// Extracts `choices[0].message.content` and, when present,
/// `choices[0].logprobs.content[*].{token,logprob}`.
pub(crate) fn parse_completion(payload: &Value) -> Result<ChatResponse, GatewayError> {
    let choice = payload
        .pointer("/choices/0")
        .ok_or_else(|| GatewayError::Malformed("missing choices[0]".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| GatewayError::Malformed("missing choices[0].message.content".into()))?
        .to_string();
    let token_logprobs = match choice.pointer("/logprobs/content") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) => Some(
            items
                .iter()
                .map(|item| {
                    let token = item.get("token").and_then(Value::as_str).unwrap_or_default();
                    let logprob = item
                        .get("logprob")
                        .and_then(Value::as_f64)
                        .ok_or_else(|| GatewayError::Malformed("logprob entry without a number".into()))?;
                    Ok(TokenLogprob { token: token.to_string(), logprob })
                })
                .collect::<Result<Vec<_>, GatewayError>>()?,
        ),
        Some(_) => return Err(GatewayError::Malformed("logprobs.content is not a list".into())),
    };
    Ok(ChatResponse { text, token_logprobs, backend: BackendKind::Live })
}

#[async_trait]
impl ChatBackend for HttpBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Live
    }

    async fn send(&self, req: &ChatRequest, _fingerprint: &str) -> Result<BackendReply, GatewayError> {
        let mut builder = self.client.post(&self.endpoint).json(&request_body(req));
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().await.map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().await.map_err(|e| GatewayError::Transport(e.to_string()))?;
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(GatewayError::Auth(format!("HTTP {}", status.as_u16())));
        }
        if !status.is_success() {
            return Err(GatewayError::Status { status: status.as_u16(), body });
        }
        let payload: Value = serde_json::from_str(&body).map_err(|e| GatewayError::Malformed(e.to_string()))?;
        let response = parse_completion(&payload)?;
        Ok(BackendReply { response, raw: Some(payload) })
    }
}
