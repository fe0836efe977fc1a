//! Run configuration: a TOML file, overridden by global flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerChoice {
    /// Character tokens for unspaced target languages, words otherwise.
    #[default]
    Auto,
    Words,
    Chars,
    Lexicon,
}

fn default_timeout() -> u64 {
    120
}

fn default_percentile() -> f64 {
    mqmeval::calibration::DEFAULT_PERCENTILE
}

fn default_inflight() -> usize {
    mqmeval::gateway::DEFAULT_MAX_INFLIGHT
}

fn default_concurrency() -> usize {
    64
}

fn default_thetas() -> Vec<f64> {
    mqmeval::spanmatch::default_thetas()
}

fn default_true() -> bool {
    true
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Secrets never live here: the API key is read from the environment
/// variable named by `api_key_env`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<String>,
    pub lang_pair: Option<String>,

    pub typology: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub demos: Option<PathBuf>,

    pub segments: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub validation_segments: Option<PathBuf>,
    pub validation_annotations: Option<PathBuf>,

    pub endpoint: Option<String>,
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    pub mock: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_inflight")]
    pub max_inflight: usize,
    pub requests_per_second: Option<f64>,
    pub max_retries: Option<u32>,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    pub subtypes: Option<Vec<String>>,

    pub threshold: Option<f64>,
    pub threshold_store: Option<PathBuf>,
    #[serde(default = "default_percentile")]
    pub percentile: f64,

    #[serde(default = "default_thetas")]
    pub thetas: Vec<f64>,
    #[serde(default)]
    pub tokenizer: TokenizerChoice,
    #[serde(default)]
    pub lexicon: Vec<String>,

    #[serde(default = "default_true")]
    pub normalize: bool,
    pub epsilon: Option<f64>,

    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

/// Command-line overrides shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub cache_dir: Option<PathBuf>,
    pub mock: Option<PathBuf>,
    pub max_inflight: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

pub enum Backend<'a> {
    Live { endpoint: &'a str },
    Mock { transcript: &'a Path },
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        // Position only, never the offending line.
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1);
            match line {
                Some(n) => anyhow::anyhow!("invalid configuration at line {n}: {}", e.message()),
                None => anyhow::anyhow!("invalid configuration: {}", e.message()),
            }
        })?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse(&text, base).with_context(|| format!("in {}", path.display()))
    }

    /// Relative paths in the file are relative to the file's directory.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        for p in [
            &mut self.typology,
            &mut self.prompts,
            &mut self.demos,
            &mut self.segments,
            &mut self.annotations,
            &mut self.validation_segments,
            &mut self.validation_annotations,
            &mut self.mock,
            &mut self.cache_dir,
            &mut self.threshold_store,
        ] {
            fix(p);
        }
        if self.out_dir.is_relative() {
            self.out_dir = base.join(&self.out_dir);
        }
    }

    /// Flags win over the file. A mock transcript given on the command
    /// line replaces a configured endpoint.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(d) = &o.cache_dir {
            self.cache_dir = Some(d.clone());
        }
        if let Some(m) = &o.mock {
            self.mock = Some(m.clone());
            self.endpoint = None;
        }
        if let Some(n) = o.max_inflight {
            self.max_inflight = n;
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
    }

    pub fn backend(&self) -> Result<Backend<'_>> {
        match (&self.endpoint, &self.mock) {
            (Some(_), Some(_)) => bail!("configure either `endpoint` or `mock`, not both"),
            (None, None) => bail!("no backend: set `endpoint` (live) or `mock` (transcript), or pass --mock"),
            (Some(endpoint), None) => Ok(Backend::Live { endpoint }),
            (None, Some(transcript)) => Ok(Backend::Mock { transcript }),
        }
    }

    pub fn model(&self) -> Result<&str> {
        self.model.as_deref().context("`model` is not configured")
    }

    pub fn lang_pair(&self) -> Result<&str> {
        self.lang_pair.as_deref().context("`lang_pair` is not configured")
    }

    pub fn store_path(&self) -> PathBuf {
        self.threshold_store.clone().unwrap_or_else(|| self.out_dir.join("thresholds.json"))
    }

    /// Digest of the effective configuration.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.percentile > 0.0 && self.percentile <= 1.0) {
            bail!("percentile {} outside (0, 1]", self.percentile);
        }
        if self.max_inflight == 0 {
            bail!("max_inflight must be at least 1");
        }
        if let Some(t) = self.threshold {
            if t.is_nan() {
                bail!("threshold is NaN");
            }
        }
        if let Some(bad) = self.thetas.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            bail!("theta {bad} outside (0, 1]");
        }
        if self.tokenizer == TokenizerChoice::Lexicon && self.lexicon.is_empty() {
            bail!("tokenizer = \"lexicon\" needs a non-empty `lexicon` list");
        }
        Ok(())
    }
}
