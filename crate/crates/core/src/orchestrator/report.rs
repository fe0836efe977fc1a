//! Serialized forms of evaluation results.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::{json, Value};

use super::{FindingStatus, Provenance, RecordStage, SegmentResult};
use crate::typology::{Score, Severity};

/// JSON form of a confidence or threshold: finite values are numbers,
/// non-finite ones are the strings `-inf`, `inf` or `nan`.
pub fn real_json(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v.is_nan() {
        json!("nan")
    } else if v < 0.0 {
        json!("-inf")
    } else {
        json!("inf")
    }
}

/// Inverse of [`real_json`].
pub fn real_from_json(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => match s.as_str() {
            "-inf" => Some(f64::NEG_INFINITY),
            "inf" => Some(f64::INFINITY),
            "nan" => Some(f64::NAN),
            _ => None,
        },
        _ => None,
    }
}

#[derive(Serialize)]
struct FindingLine<'a> {
    subtype: &'a str,
    severity: Severity,
    span: &'a str,
    status: FindingStatus,
    provenance: Provenance,
}

#[derive(Serialize)]
struct RecordLine<'a> {
    subtype: &'a str,
    stage_path: Vec<&'static str>,
    sr_confidence: Value,
    exchange_fingerprints: &'a [String],
    flags: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct SegmentLine<'a> {
    system: &'a str,
    seg_id: &'a str,
    score: f64,
    findings: Vec<FindingLine<'a>>,
    records: Vec<RecordLine<'a>>,
}

pub fn segment_json(r: &SegmentResult) -> String {
    let line = SegmentLine {
        system: &r.system,
        seg_id: &r.seg_id,
        score: r.score.to_f64(),
        findings: r
            .findings()
            .map(|f| FindingLine {
                subtype: &f.subtype,
                severity: f.severity,
                span: &f.span_text,
                status: f.status,
                provenance: f.provenance,
            })
            .collect(),
        records: r
            .records
            .iter()
            .map(|rec| RecordLine {
                subtype: &rec.subtype,
                stage_path: rec.stage_path.iter().map(|s| s.as_str()).collect(),
                sr_confidence: rec.sr_confidence.map_or(Value::Null, real_json),
                exchange_fingerprints: &rec.exchanges,
                flags: &rec.flags,
                error: rec.error.as_deref(),
            })
            .collect(),
    };
    serde_json::to_string(&line).expect("report line serializes")
}

/// One JSON object per segment, newline-terminated.
pub fn report_jsonl(results: &[SegmentResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&segment_json(r));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunCounts {
    pub segments: usize,
    pub records: usize,
    pub flagged_records: usize,
    pub failed_records: usize,
    pub discussed_records: usize,
    pub confirmed_findings: usize,
}

pub fn run_counts(results: &[SegmentResult]) -> RunCounts {
    let mut c = RunCounts { segments: results.len(), ..Default::default() };
    for rec in results.iter().flat_map(|r| r.records.iter()) {
        c.records += 1;
        c.flagged_records += usize::from(rec.is_flagged());
        c.failed_records += usize::from(rec.error.is_some());
        c.discussed_records += usize::from(rec.entered(RecordStage::CD));
        c.confirmed_findings += rec.confirmed().count();
    }
    c
}

/// Per-system totals and run settings.
pub fn summary_json(results: &[SegmentResult], model: &str, lang_pair: &str, threshold: f64, typology_digest: &str) -> Value {
    let mut systems: BTreeMap<&str, Vec<Score>> = BTreeMap::new();
    for r in results {
        systems.entry(&r.system).or_default().push(r.score);
    }
    let systems: serde_json::Map<String, Value> = systems
        .into_iter()
        .map(|(name, scores)| {
            let total = scores.iter().copied().sum::<Score>().to_f64();
            let n = scores.len();
            (name.to_string(), json!({"segments": n, "total_score": total, "mean_score": total / n as f64}))
        })
        .collect();
    let c = run_counts(results);
    json!({
        "model": model,
        "lang_pair": lang_pair,
        "threshold": real_json(threshold),
        "typology_digest": typology_digest,
        "systems": systems,
        "segments": c.segments,
        "records": c.records,
        "flagged_records": c.flagged_records,
        "failed_records": c.failed_records,
        "discussed_records": c.discussed_records,
        "confirmed_findings": c.confirmed_findings,
    })
}
