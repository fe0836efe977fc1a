//! Scripted offline backend.
//!
//! A transcript is an ordered list of records. Each request is answered by
//! the first record whose matcher accepts it and whose use budget (`times`,
//! unlimited when absent) is not spent. A matcher names a request
//! fingerprint, one or more substrings that must all occur in the prompt,
//! or both.

use std::path::Path;
use std::sync::Mutex;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{
    split_into_tokens, BackendKind, BackendReply, ChatBackend, ChatRequest, ChatResponse, GatewayError,
    TokenLogprob,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRecord {
    #[serde(rename = "match")]
    pub matcher: MockMatch,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<MockLogprob>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockMatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_substring: Option<Substrings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Substrings {
    One(String),
    All(Vec<String>),
}

impl Substrings {
    fn all_in(&self, haystack: &str) -> bool {
        match self {
            Substrings::One(s) => haystack.contains(s.as_str()),
            Substrings::All(v) => v.iter().all(|s| haystack.contains(s.as_str())),
        }
    }
}

/// A scripted log-probability: a bare number (tokens are then synthesized by
/// splitting the text) or an explicit token/logprob pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockLogprob {
    Value(f64),
    Token { token: String, logprob: f64 },
}

impl MockMatch {
    fn accepts(&self, fingerprint: &str, prompt: &str) -> bool {
        self.fingerprint.as_deref().is_none_or(|f| f == fingerprint)
            && self.prompt_substring.as_ref().is_none_or(|s| s.all_in(prompt))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MockTranscript {
    pub records: Vec<MockRecord>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TranscriptDoc {
    List(Vec<MockRecord>),
    Wrapped { records: Vec<MockRecord> },
}

impl MockTranscript {
    pub fn from_json(text: &str) -> Result<Self, GatewayError> {
        let doc: TranscriptDoc =
            serde_json::from_str(text).map_err(|e| GatewayError::Config(format!("mock transcript: {e}")))?;
        let records = match doc {
            TranscriptDoc::List(r) | TranscriptDoc::Wrapped { records: r } => r,
        };
        let t = MockTranscript { records };
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn extend(&mut self, other: MockTranscript) {
        self.records.extend(other.records);
    }

    fn validate(&self) -> Result<(), GatewayError> {
        for (i, r) in self.records.iter().enumerate() {
            if r.matcher.fingerprint.is_none() && r.matcher.prompt_substring.is_none() {
                return Err(GatewayError::Config(format!("mock record {i} has an empty matcher")));
            }
            if let Some(lps) = &r.logprobs {
                let explicit: Vec<&str> = lps
                    .iter()
                    .filter_map(|l| match l {
                        MockLogprob::Token { token, .. } => Some(token.as_str()),
                        MockLogprob::Value(_) => None,
                    })
                    .collect();
                if !explicit.is_empty() && (explicit.len() != lps.len() || explicit.concat() != r.text) {
                    return Err(GatewayError::Config(format!(
                        "mock record {i}: explicit tokens must cover the text exactly"
                    )));
                }
                if lps.iter().any(|l| !(l.logprob() <= 0.0)) {
                    return Err(GatewayError::Config(format!("mock record {i}: logprobs must be <= 0")));
                }
            }
        }
        Ok(())
    }
}

impl MockLogprob {
    fn logprob(&self) -> f64 {
        match self {
            MockLogprob::Value(v) => *v,
            MockLogprob::Token { logprob, .. } => *logprob,
        }
    }
}

impl MockRecord {
    fn token_logprobs(&self) -> Option<Vec<TokenLogprob>> {
        let lps = self.logprobs.as_ref()?;
        let synthesized = split_into_tokens(&self.text, lps.len());
        Some(
            lps.iter()
                .zip(synthesized)
                .map(|(l, piece)| match l {
                    MockLogprob::Value(v) => TokenLogprob { token: piece, logprob: *v },
                    MockLogprob::Token { token, logprob } => {
                        TokenLogprob { token: token.clone(), logprob: *logprob }
                    }
                })
                .collect(),
        )
    }
}

pub struct MockBackend {
    transcript: MockTranscript,
    uses: Mutex<Vec<usize>>,
}

impl MockBackend {
    pub fn new(transcript: MockTranscript) -> Self {
        let n = transcript.records.len();
        MockBackend { transcript, uses: Mutex::new(vec![0; n]) }
    }

    /// How many times each record has been served.
    pub fn uses(&self) -> Vec<usize> {
        self.uses.lock().expect("mock lock").clone()
    }
}

#[async_trait]
impl ChatBackend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    async fn send(&self, req: &ChatRequest, fingerprint: &str) -> Result<BackendReply, GatewayError> {
        let prompt = req.prompt_text();
        let mut uses = self.uses.lock().expect("mock lock");
        let mut matched_any = false;
        for (i, record) in self.transcript.records.iter().enumerate() {
            if !record.matcher.accepts(fingerprint, &prompt) {
                continue;
            }
            matched_any = true;
            if record.times.is_some_and(|limit| uses[i] >= limit) {
                continue;
            }
            uses[i] += 1;
            let token_logprobs = if req.want_logprobs { record.token_logprobs() } else { None };
            return Ok(BackendReply {
                response: ChatResponse {
                    text: record.text.clone(),
                    token_logprobs,
                    backend: BackendKind::Mock,
                },
                raw: None,
            });
        }
        let fingerprint = fingerprint.to_string();
        Err(if matched_any {
            GatewayError::MockExhausted { fingerprint }
        } else {
            GatewayError::MockMissing { fingerprint }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{confidence, fingerprint, ChatMessage, Gateway};
    use std::sync::Arc;

    fn req(content: &str) -> ChatRequest {
        ChatRequest::new("m", vec![ChatMessage::user(content)]).with_logprobs()
    }

    #[tokio::test]
    async fn scripted_lookup_by_fingerprint_and_substring() {
        let r = req("compare these");
        let fp = fingerprint(&r);
        let doc = format!(
            r#"[
              {{"match": {{"fingerprint": "{fp}"}}, "text": "Error has been corrected.", "logprobs": [-0.5, -0.25]}},
              {{"match": {{"prompt_substring": ["alpha", "beta"]}}, "text": "both"}},
              {{"match": {{"prompt_substring": "alpha"}}, "text": "one", "times": 1}}
            ]"#
        );
        let backend = MockBackend::new(MockTranscript::from_json(&doc).unwrap());
        let got = backend.send(&r, &fp).await.unwrap().response;
        assert_eq!(got.text, "Error has been corrected.");
        let toks = got.token_logprobs.clone().unwrap();
        assert_eq!(toks.len(), 2);
        assert_eq!(toks.iter().map(|t| t.token.as_str()).collect::<String>(), got.text);
        assert_eq!(confidence(&got).unwrap(), -0.75);

        let ab = req("alpha and beta");
        assert_eq!(backend.send(&ab, &fingerprint(&ab)).await.unwrap().response.text, "both");

        let a = req("alpha only");
        assert_eq!(backend.send(&a, &fingerprint(&a)).await.unwrap().response.text, "one");
        assert!(matches!(
            backend.send(&a, &fingerprint(&a)).await,
            Err(GatewayError::MockExhausted { .. })
        ));
        let none = req("gamma");
        assert!(matches!(
            backend.send(&none, &fingerprint(&none)).await,
            Err(GatewayError::MockMissing { .. })
        ));
    }

    #[tokio::test]
    async fn cache_serves_second_call_identically() {
        let dir = tempfile::tempdir().unwrap();
        let transcript =
            MockTranscript::from_json(r#"[{"match": {"prompt_substring": "x"}, "text": "hello", "logprobs": [-0.1]}]"#)
                .unwrap();
        let gw = Gateway::new(Arc::new(MockBackend::new(transcript)))
            .with_cache(crate::gateway::DiskCache::open(dir.path()).unwrap());
        let first = gw.complete(&req("x")).await.unwrap();
        let second = gw.complete(&req("x")).await.unwrap();
        assert_eq!(first.response.backend, BackendKind::Mock);
        assert_eq!(second.response.backend, BackendKind::Cache);
        assert_eq!(first.response.text, second.response.text);
        assert_eq!(first.response.token_logprobs, second.response.token_logprobs);
        assert_eq!(gw.stats().backend_calls, 1);
        assert_eq!(gw.stats().cache_hits, 1);
    }

    #[test]
    fn invalid_transcripts() {
        assert!(MockTranscript::from_json(r#"[{"match": {}, "text": "x"}]"#).is_err());
        assert!(MockTranscript::from_json(r#"[{"match": {"prompt_substring": "a"}, "text": "x", "logprobs": [0.5]}]"#).is_err());
        assert!(MockTranscript::from_json(
            r#"[{"match": {"prompt_substring": "a"}, "text": "xy", "logprobs": [{"token": "x", "logprob": -1}]}]"#
        )
        .is_err());
        assert!(MockTranscript::from_json(r#"{"records": []}"#).is_ok());
    }
}
