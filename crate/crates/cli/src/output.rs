//! Output files, their metadata sidecars, and reading reports back.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mqmeval::metrics::ScoreSeries;
use mqmeval::spanmatch::SpanSet;

/// Run metadata written next to every output as `<file>.meta.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub command: String,
    pub code_version: &'static str,
    pub config_digest: String,
    pub typology_digest: String,
    /// Input file name → SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "serde_json::Map::is_empty")]
    pub notes: serde_json::Map<String, serde_json::Value>,
}

impl RunMeta {
    pub fn new(command: &str, config_digest: String, typology_digest: &str) -> Self {
        RunMeta {
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION"),
            config_digest,
            typology_digest: typology_digest.to_string(),
            inputs: BTreeMap::new(),
            notes: serde_json::Map::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        self.inputs.insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.notes.insert(key.to_string(), serde_json::to_value(value).expect("note serializes"));
    }
}

pub fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// Writes `contents` to `path` and its metadata sidecar.
pub fn write_with_meta(path: &Path, contents: &str, meta: &RunMeta) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))?;
    let mut m = serde_json::to_string_pretty(meta)?;
    m.push('\n');
    let side = sidecar(path);
    std::fs::write(&side, m).with_context(|| format!("cannot write {}", side.display()))?;
    Ok(())
}

#[derive(Debug, Clone, Deserialize)]
pub struct ReportFinding {
    pub subtype: String,
    pub severity: String,
    pub span: String,
    pub status: String,
    pub provenance: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ReportLine {
    pub system: String,
    pub seg_id: String,
    pub score: f64,
    pub findings: Vec<ReportFinding>,
}

pub fn read_report(path: &Path) -> Result<Vec<ReportLine>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

pub fn report_scores(lines: &[ReportLine]) -> Result<ScoreSeries> {
    Ok(ScoreSeries::new(lines.iter().map(|l| ((l.system.clone(), l.seg_id.clone()), l.score)))?)
}

pub fn report_spans(lines: &[ReportLine]) -> SpanSet {
    let mut s = SpanSet::default();
    for l in lines {
        for f in l.findings.iter().filter(|f| f.status == "confirmed") {
            s.push(&l.system, &l.seg_id, &f.span);
        }
    }
    s
}
