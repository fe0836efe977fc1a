use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ChatRequest, ChatResponse, GatewayError};

/// One file per request fingerprint, holding the canonical request and the
/// full response (text, token log-probabilities, raw payload).
#[derive(Debug, Clone)]
pub struct DiskCache {
    dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub fingerprint: String,
    pub request: Value,
    pub response: ChatResponse,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<Value>,
}

impl DiskCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| cache_err(&dir, e))?;
        Ok(DiskCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, fingerprint: &str) -> PathBuf {
        self.dir.join(format!("{fingerprint}.json"))
    }

    pub fn get(&self, fingerprint: &str) -> Result<Option<CacheEntry>, GatewayError> {
        let path = self.path_for(fingerprint);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(cache_err(&path, e)),
        };
        let entry: CacheEntry = serde_json::from_slice(&bytes).map_err(|e| cache_err(&path, e))?;
        if entry.fingerprint != fingerprint {
            return Err(cache_err(&path, "fingerprint does not match file name"));
        }
        Ok(Some(entry))
    }

    /// Writes to a temporary file in the cache directory, then renames it
    /// into place.
    pub fn put(
        &self,
        fingerprint: &str,
        request: &ChatRequest,
        response: &ChatResponse,
        raw: Option<&Value>,
    ) -> Result<(), GatewayError> {
        let entry = CacheEntry {
            fingerprint: fingerprint.to_string(),
            request: serde_json::to_value(request).expect("request serializes"),
            response: response.clone(),
            raw: raw.cloned(),
        };
        let path = self.path_for(fingerprint);
        let body = serde_json::to_vec_pretty(&entry).map_err(|e| cache_err(&path, e))?;
        let mut tmp = tempfile::Builder::new()
            .prefix(".tmp-")
            .tempfile_in(&self.dir)
            .map_err(|e| cache_err(&self.dir, e))?;
        tmp.write_all(&body).map_err(|e| cache_err(&path, e))?;
        tmp.persist(&path).map_err(|e| cache_err(&path, e.error))?;
        Ok(())
    }
}

fn cache_err(path: &Path, e: impl std::fmt::Display) -> GatewayError {
    GatewayError::Cache { path: path.display().to_string(), message: e.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{fingerprint, BackendKind, ChatMessage, TokenLogprob};

    #[test]
    fn put_then_get_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::open(dir.path().join("c")).unwrap();
        let req = ChatRequest::new("m", vec![ChatMessage::user("hello")]).with_logprobs();
        let fp = fingerprint(&req);
        assert!(cache.get(&fp).unwrap().is_none());
        let resp = ChatResponse {
            text: "Error has been corrected.".into(),
            token_logprobs: Some(vec![
                TokenLogprob { token: "Error".into(), logprob: -0.1 },
                TokenLogprob { token: " has been corrected.".into(), logprob: -1.0 / 3.0 },
            ]),
            backend: BackendKind::Live,
        };
        cache.put(&fp, &req, &resp, None).unwrap();
        let got = cache.get(&fp).unwrap().unwrap();
        assert_eq!(got.response, resp);
        assert_eq!(got.request, serde_json::to_value(&req).unwrap());
    }

    #[test]
    fn corrupt_entry_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::open(dir.path()).unwrap();
        std::fs::write(dir.path().join("abc.json"), "not json").unwrap();
        assert!(matches!(cache.get("abc"), Err(GatewayError::Cache { .. })));
    }
}
