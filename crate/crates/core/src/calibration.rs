//! Gate threshold acquisition from a validation set and a small JSON store
//! of thresholds keyed by (model, language pair).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Dataset;
use crate::orchestrator::{OrchestratorError, Pipeline};

pub const DEFAULT_PERCENTILE: f64 = 0.60;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("percentile {0} outside (0, 1]")]
    Percentile(f64),
    #[error("cannot take a percentile of an empty list")]
    EmptyValues,
    #[error("validation dataset has no segments")]
    EmptyValidation,
    #[error("no record reached self-reflection with a finite confidence ({records} records, {failed} failed)")]
    EmptyPool { records: usize, failed: usize },
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error("threshold store {path}: {message}")]
    Store { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationConfig {
    pub percentile: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig { percentile: DEFAULT_PERCENTILE }
    }
}

impl CalibrationConfig {
    pub fn new(percentile: f64) -> Result<Self, CalibrationError> {
        check_percentile(percentile)?;
        Ok(CalibrationConfig { percentile })
    }
}

fn check_percentile(p: f64) -> Result<(), CalibrationError> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(CalibrationError::Percentile(p))
    }
}

/// Element at index `ceil(p·n) − 1` of the ascending sort.
pub fn percentile_nearest_rank(values: &[f64], p: f64) -> Result<f64, CalibrationError> {
    check_percentile(p)?;
    if values.is_empty() {
        return Err(CalibrationError::EmptyValues);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (p * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub threshold: f64,
    pub percentile: f64,
    /// Finite verification confidences, ascending.
    pub pool: Vec<f64>,
    /// Records whose confidence was −∞ (missing log-probabilities).
    pub excluded: usize,
    pub failed_records: usize,
    pub validation_digest: String,
}

/// Digest of a dataset's segment table.
pub fn dataset_digest(d: &Dataset) -> String {
    hex::encode(Sha256::digest(d.segments_tsv().as_bytes()))
}

/// Runs subtype evaluation and self-reflection over `validation` (the
/// discussion stage never runs) and takes the configured percentile of the
/// pooled verification confidences.
pub async fn calibrate_threshold(
    validation: &Dataset,
    pipeline: &Pipeline,
    cfg: &CalibrationConfig,
) -> Result<Calibration, CalibrationError> {
    check_percentile(cfg.percentile)?;
    if validation.segments.is_empty() {
        return Err(CalibrationError::EmptyValidation);
    }
    let no_discussion = pipeline.with_threshold(f64::NEG_INFINITY)?;
    let results = no_discussion.evaluate_dataset(validation).await?;

    let mut pool = Vec::new();
    let (mut excluded, mut failed, mut records) = (0, 0, 0);
    for rec in results.iter().flat_map(|r| &r.records) {
        records += 1;
        failed += usize::from(rec.error.is_some());
        match rec.sr_confidence {
            Some(c) if c.is_finite() => pool.push(c),
            Some(_) => excluded += 1,
            None => {}
        }
    }
    if pool.is_empty() {
        return Err(CalibrationError::EmptyPool { records, failed });
    }
    pool.sort_by(f64::total_cmp);
    let threshold = percentile_nearest_rank(&pool, cfg.percentile)?;
    tracing::info!(pool = pool.len(), excluded, threshold, "calibrated");
    Ok(Calibration {
        threshold,
        percentile: cfg.percentile,
        pool,
        excluded,
        failed_records: failed,
        validation_digest: dataset_digest(validation),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub model: String,
    pub lang_pair: String,
    pub threshold: f64,
    pub percentile: f64,
    pub pool_size: usize,
    pub validation_digest: String,
    /// Order the pool was ranked in before taking the percentile.
    pub ranking: String,
}

impl ThresholdEntry {
    pub fn from_calibration(model: &str, lang_pair: &str, c: &Calibration) -> Self {
        ThresholdEntry {
            model: model.to_string(),
            lang_pair: lang_pair.to_string(),
            threshold: c.threshold,
            percentile: c.percentile,
            pool_size: c.pool.len(),
            validation_digest: c.validation_digest.clone(),
            ranking: "ascending".to_string(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStore {
    pub entries: Vec<ThresholdEntry>,
}

impl ThresholdStore {
    /// Missing files load as an empty store.
    pub fn load(path: &Path) -> Result<Self, CalibrationError> {
        let err = |message: String| CalibrationError::Store { path: path.display().to_string(), message };
        match std::fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| err(e.to_string())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(ThresholdStore::default()),
            Err(e) => Err(err(e.to_string())),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CalibrationError> {
        let err = |message: String| CalibrationError::Store { path: path.display().to_string(), message };
        let mut text = serde_json::to_string_pretty(self).map_err(|e| err(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| err(e.to_string()))
    }

    pub fn get(&self, model: &str, lang_pair: &str) -> Option<&ThresholdEntry> {
        self.entries.iter().find(|e| e.model == model && e.lang_pair == lang_pair)
    }

    /// Inserts or replaces the entry for the same (model, language pair).
    pub fn upsert(&mut self, entry: ThresholdEntry) {
        match self.entries.iter_mut().find(|e| e.model == entry.model && e.lang_pair == entry.lang_pair) {
            Some(slot) => *slot = entry,
            None => self.entries.push(entry),
        }
        let mut keyed: BTreeMap<(String, String), ThresholdEntry> = BTreeMap::new();
        for e in self.entries.drain(..) {
            keyed.insert((e.model.clone(), e.lang_pair.clone()), e);
        }
        self.entries = keyed.into_values().collect();
    }
}
