//! MQM-annotated datasets: segments, gold error annotations, and
//! length/domain/system slicing.
//!
//! Both files are UTF-8 TSV with a header row. Tabs, newlines and
//! backslashes inside fields are written as `\t`, `\n` and `\\`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::typology::{Score, Severity, Typology, TypologyError, Weight};

pub const SEGMENT_COLUMNS: [&str; 7] =
    ["system", "domain", "doc_id", "seg_id", "source", "target", "reference"];
pub const ANNOTATION_COLUMNS: [&str; 7] =
    ["system", "seg_id", "subtype", "severity", "span_text", "span_start", "span_end"];

/// Word-count bounds for length buckets: fewer than 12 words is short,
/// more than 27 is long.
pub const SHORT_BELOW: usize = 12;
pub const LONG_ABOVE: usize = 27;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file} row {row}: {message}")]
    Schema { file: &'static str, row: usize, message: String },
    #[error("dangling annotation row {row}: no segment ({system}, {seg_id})")]
    DanglingAnnotation { row: usize, system: String, seg_id: String },
    #[error("duplicate segment ({system}, {seg_id}) at row {row}")]
    DuplicateSegment { row: usize, system: String, seg_id: String },
    #[error("unknown segment ({system}, {seg_id})")]
    UnknownSegment { system: String, seg_id: String },
    #[error(transparent)]
    Typology(#[from] TypologyError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub system: String,
    pub domain: String,
    pub doc_id: String,
    pub seg_id: String,
    pub source: String,
    pub translation: String,
    pub reference: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub system: String,
    pub seg_id: String,
    pub subtype: String,
    pub severity: Severity,
    pub span_text: String,
    /// Character offsets into the translation; `None` when absent or
    /// inconsistent with `span_text`.
    pub span: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub name: String,
    pub segments: Vec<Segment>,
    pub gold: Vec<GoldAnnotation>,
    /// Non-fatal problems found while loading (e.g. discarded offsets).
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthBucket {
    Short,
    Medium,
    Long,
}

impl fmt::Display for LengthBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LengthBucket::Short => "short",
            LengthBucket::Medium => "medium",
            LengthBucket::Long => "long",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceBy {
    Domain,
    Length,
    System,
}

pub fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

/// Splits a TSV document into unescaped rows, skipping the header and
/// blank lines. Row numbers are 1-based file line numbers.
pub(crate) fn tsv_rows(
    text: &str,
    file: &'static str,
    header: &[&str],
    min_cols: usize,
) -> Result<Vec<(usize, Vec<String>)>, CorpusError> {
    let mut lines = text.lines().enumerate();
    let first = lines.find(|(_, l)| !l.trim().is_empty());
    let Some((hrow, hline)) = first else {
        return Ok(Vec::new());
    };
    let got: Vec<&str> = hline.trim_end_matches('\r').split('\t').collect();
    let expected_prefix = &header[..min_cols];
    if got.len() < min_cols || got.len() > header.len() || got[..min_cols] != *expected_prefix {
        return Err(CorpusError::Schema {
            file,
            row: hrow + 1,
            message: format!("expected header `{}`", header.join("\\t")),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<String> = line.split('\t').map(unescape_field).collect();
        if cols.len() < min_cols || cols.len() > header.len() {
            return Err(CorpusError::Schema {
                file,
                row: i + 1,
                message: format!("expected {} columns, found {}", header.len(), cols.len()),
            });
        }
        rows.push((i + 1, cols));
    }
    Ok(rows)
}

fn parse_offset(raw: &str, row: usize) -> Result<Option<usize>, CorpusError> {
    let n: i64 = raw.trim().parse().map_err(|_| CorpusError::Schema {
        file: "annotations",
        row,
        message: format!("invalid offset `{raw}`"),
    })?;
    Ok(if n < 0 { None } else { Some(n as usize) })
}

fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
    let s = indices.nth(start)?;
    let e = if end == start { s } else { indices.nth(end - start - 1)? };
    Some(&text[s..e])
}

impl Dataset {
    /// Reads the segments file and, when given, the annotations file.
    pub fn load(segments_file: &Path, annotations_file: Option<&Path>) -> Result<Dataset, CorpusError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|source| CorpusError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        let segments = read(segments_file)?;
        let annotations = annotations_file.map(read).transpose()?;
        let name = segments_file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Dataset::from_tsv(&name, &segments, annotations.as_deref())
    }

    pub fn from_tsv(name: &str, segments: &str, annotations: Option<&str>) -> Result<Dataset, CorpusError> {
        let mut ds = Dataset { name: name.to_string(), ..Default::default() };
        let mut index: HashMap<(String, String), usize> = HashMap::new();

        for (row, mut cols) in tsv_rows(segments, "segments", &SEGMENT_COLUMNS, 6)? {
            cols.resize(7, String::new());
            let mut it = cols.into_iter();
            let mut next = || it.next().unwrap_or_default();
            let seg = Segment {
                system: next(),
                domain: next(),
                doc_id: next(),
                seg_id: next(),
                source: next(),
                translation: next(),
                reference: Some(next()).filter(|r| !r.is_empty()),
            };
            if seg.system.is_empty() || seg.seg_id.is_empty() {
                return Err(CorpusError::Schema {
                    file: "segments",
                    row,
                    message: "system and seg_id must be non-empty".into(),
                });
            }
            if seg.source.trim().is_empty() || seg.translation.trim().is_empty() {
                return Err(CorpusError::Schema {
                    file: "segments",
                    row,
                    message: "source and target must be non-empty".into(),
                });
            }
            let key = (seg.system.clone(), seg.seg_id.clone());
            if index.contains_key(&key) {
                return Err(CorpusError::DuplicateSegment { row, system: key.0, seg_id: key.1 });
            }
            index.insert(key, ds.segments.len());
            ds.segments.push(seg);
        }

        let Some(annotations) = annotations else {
            return Ok(ds);
        };
        for (row, cols) in tsv_rows(annotations, "annotations", &ANNOTATION_COLUMNS, 7)? {
            let [system, seg_id, subtype, severity, span_text, start, end]: [String; 7] =
                cols.try_into().expect("column count checked");
            let severity: Severity = severity.parse().map_err(|e: TypologyError| CorpusError::Schema {
                file: "annotations",
                row,
                message: e.to_string(),
            })?;
            let Some(&seg_idx) = index.get(&(system.clone(), seg_id.clone())) else {
                return Err(CorpusError::DanglingAnnotation { row, system, seg_id });
            };
            let span = match (parse_offset(&start, row)?, parse_offset(&end, row)?) {
                (Some(s), Some(e)) => {
                    let translation = &ds.segments[seg_idx].translation;
                    if char_slice(translation, s, e) == Some(span_text.as_str()) {
                        Some((s, e))
                    } else {
                        ds.warnings.push(format!(
                            "annotations row {row}: offsets {s}..{e} do not match span text; offsets discarded"
                        ));
                        None
                    }
                }
                _ => None,
            };
            ds.gold.push(GoldAnnotation { system, seg_id, subtype, severity, span_text, span });
        }
        Ok(ds)
    }

    pub fn segments_tsv(&self) -> String {
        let mut out = SEGMENT_COLUMNS.join("\t");
        out.push('\n');
        for s in &self.segments {
            let fields = [
                &s.system,
                &s.domain,
                &s.doc_id,
                &s.seg_id,
                &s.source,
                &s.translation,
                s.reference.as_deref().unwrap_or(""),
            ];
            let row: Vec<String> = fields.iter().map(|f| escape_field(f)).collect();
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn annotations_tsv(&self) -> String {
        let mut out = ANNOTATION_COLUMNS.join("\t");
        out.push('\n');
        for a in &self.gold {
            let (s, e) = a.span.map(|(s, e)| (s as i64, e as i64)).unwrap_or((-1, -1));
            let row = [
                escape_field(&a.system),
                escape_field(&a.seg_id),
                escape_field(&a.subtype),
                a.severity.to_string(),
                escape_field(&a.span_text),
                s.to_string(),
                e.to_string(),
            ];
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn segment(&self, system: &str, seg_id: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.system == system && s.seg_id == seg_id)
    }

    pub fn gold_for<'a>(&'a self, system: &'a str, seg_id: &'a str) -> impl Iterator<Item = &'a GoldAnnotation> + 'a {
        self.gold.iter().filter(move |a| a.system == system && a.seg_id == seg_id)
    }

    /// Weighted score of a segment's gold annotations: zero when there are none.
    pub fn gold_score(&self, t: &Typology, system: &str, seg_id: &str) -> Result<Score, CorpusError> {
        if self.segment(system, seg_id).is_none() {
            return Err(CorpusError::UnknownSegment { system: system.into(), seg_id: seg_id.into() });
        }
        let penalty = self
            .gold_for(system, seg_id)
            .map(|a| resolve_weight(t, &a.subtype, a.severity))
            .collect::<Result<Vec<Weight>, _>>()?
            .into_iter()
            .sum();
        Ok(Score::from_penalty(penalty))
    }

    /// Gold scores for every segment, in dataset order.
    pub fn gold_scores(&self, t: &Typology) -> Result<Vec<((String, String), Score)>, CorpusError> {
        let mut totals: HashMap<(&str, &str), Vec<Weight>> = HashMap::new();
        for a in &self.gold {
            totals
                .entry((&a.system, &a.seg_id))
                .or_default()
                .push(resolve_weight(t, &a.subtype, a.severity)?);
        }
        Ok(self
            .segments
            .iter()
            .map(|s| {
                let penalty: Weight = totals
                    .get(&(s.system.as_str(), s.seg_id.as_str()))
                    .map(|ws| ws.iter().copied().sum())
                    .unwrap_or(Weight::ZERO);
                ((s.system.clone(), s.seg_id.clone()), Score::from_penalty(penalty))
            })
            .collect())
    }

    /// Partitions the segments by the requested key; keys are the values
    /// actually observed.
    pub fn slice(&self, by: SliceBy) -> BTreeMap<String, Vec<&Segment>> {
        let mut out: BTreeMap<String, Vec<&Segment>> = BTreeMap::new();
        for s in &self.segments {
            let key = match by {
                SliceBy::Domain => s.domain.clone(),
                SliceBy::System => s.system.clone(),
                SliceBy::Length => length_bucket(s).to_string(),
            };
            out.entry(key).or_default().push(s);
        }
        out
    }
}

/// Gold annotations name subtypes either by id or display name.
fn resolve_weight(t: &Typology, subtype: &str, severity: Severity) -> Result<Weight, TypologyError> {
    let id = t
        .subtype(subtype)
        .or_else(|| t.find_subtype_by_name(subtype))
        .map(|s| s.id.as_str())
        .ok_or_else(|| TypologyError::UnknownSubtype(subtype.to_string()))?;
    t.weight_of(id, severity)
}

/// True for scripts written without spaces between words.
pub fn is_unspaced_char(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF     // Hiragana, Katakana
        | 0x3400..=0x4DBF   // CJK Extension A
        | 0x4E00..=0x9FFF   // CJK Unified Ideographs
        | 0xF900..=0xFAFF   // CJK Compatibility Ideographs
        | 0x0E00..=0x0E7F   // Thai
        | 0x0E80..=0x0EFF   // Lao
        | 0x1000..=0x109F   // Myanmar
        | 0x1780..=0x17FF   // Khmer
        | 0x20000..=0x2FA1F // CJK Extensions B+
    )
}

/// Words in `text`: whitespace tokens for spaced scripts; for text containing
/// unspaced-script characters, each such character counts as one word and any
/// remaining runs of other letters/digits count as one word each.
pub fn word_count(text: &str) -> usize {
    if !text.chars().any(is_unspaced_char) {
        return text.split_whitespace().count();
    }
    let mut count = 0;
    let mut in_run = false;
    for c in text.chars() {
        if is_unspaced_char(c) {
            count += 1;
            in_run = false;
        } else if c.is_alphanumeric() {
            if !in_run {
                count += 1;
                in_run = true;
            }
        } else {
            in_run = false;
        }
    }
    count
}

/// Bucket by source word count.
pub fn length_bucket(seg: &Segment) -> LengthBucket {
    let n = word_count(&seg.source);
    if n > LONG_ABOVE {
        LengthBucket::Long
    } else if n < SHORT_BELOW {
        LengthBucket::Short
    } else {
        LengthBucket::Medium
    }
}
