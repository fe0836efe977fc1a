//! Token-overlap matching of detected error spans against gold spans, and
//! corpus precision/recall/F1 across matching thresholds.
//!
//! A detected span E matches a gold span G at threshold θ when the longest
//! token run L shared by both covers at least θ of each: L/|G| ≥ θ and
//! L/|E| ≥ θ.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::corpus::{is_unspaced_char, unescape_field, Dataset};
use crate::orchestrator::SegmentResult;

#[derive(Debug, Error, PartialEq)]
pub enum SpanError {
    #[error("theta {0} outside (0, 1]")]
    Theta(f64),
    #[error("empty span")]
    EmptySpan,
    #[error("{file} line {line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

fn check_theta(theta: f64) -> Result<(), SpanError> {
    if theta > 0.0 && theta <= 1.0 {
        Ok(())
    } else {
        Err(SpanError::Theta(theta))
    }
}

pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<String>;
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c as u32,
            0x00A1..=0x00BF
            | 0x2000..=0x206F
            | 0x3000..=0x303F
            | 0xFE30..=0xFE4F
            | 0xFF01..=0xFF0F
            | 0xFF1A..=0xFF20
            | 0xFF3B..=0xFF40
            | 0xFF5B..=0xFF65)
}

/// Lowercased words split on whitespace, with each punctuation mark and each
/// character of an unspaced script as its own token.
#[derive(Debug, Clone, Copy, Default)]
pub struct DefaultTokenizer;

impl Tokenizer for DefaultTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut word = String::new();
        for c in text.chars() {
            if c.is_whitespace() || is_punct(c) || is_unspaced_char(c) {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                if !c.is_whitespace() {
                    out.extend(c.to_lowercase().map(String::from).reduce(|a, b| a + &b));
                }
            } else {
                word.extend(c.to_lowercase());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
        out
    }
}

/// Every non-whitespace character is a token.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharTokenizer;

impl Tokenizer for CharTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        text.chars().filter(|c| !c.is_whitespace()).flat_map(char::to_lowercase).map(String::from).collect()
    }
}

/// The default tokenizer followed by greedy longest-first merging of
/// multi-word lexicon entries into single tokens.
#[derive(Debug, Clone, Default)]
pub struct LexiconTokenizer {
    entries: Vec<Vec<String>>,
}

impl LexiconTokenizer {
    pub fn new<S: AsRef<str>>(phrases: impl IntoIterator<Item = S>) -> Self {
        let mut entries: Vec<Vec<String>> = phrases
            .into_iter()
            .map(|p| DefaultTokenizer.tokenize(p.as_ref()))
            .filter(|t| t.len() > 1)
            .collect();
        entries.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        entries.dedup();
        LexiconTokenizer { entries }
    }
}

impl Tokenizer for LexiconTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        let base = DefaultTokenizer.tokenize(text);
        let mut out = Vec::with_capacity(base.len());
        let mut i = 0;
        while i < base.len() {
            match self.entries.iter().find(|e| base[i..].starts_with(e)) {
                Some(e) => {
                    out.push(e.join(" "));
                    i += e.len();
                }
                None => {
                    out.push(base[i].clone());
                    i += 1;
                }
            }
        }
        out
    }
}

/// True for language codes whose script is written without spaces.
pub fn is_unspaced_lang(lang: &str) -> bool {
    let primary = lang.split(['-', '_']).next().unwrap_or("").to_ascii_lowercase();
    matches!(primary.as_str(), "zh" | "ja" | "th" | "lo" | "km" | "my")
}

/// Language-aware tokenization: character tokens for languages written
/// without spaces, the default tokenizer otherwise.
pub fn tokenize(text: &str, lang: &str) -> Vec<String> {
    if is_unspaced_lang(lang) {
        CharTokenizer.tokenize(text)
    } else {
        DefaultTokenizer.tokenize(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchVerdict {
    pub matched: bool,
    /// Length of the longest token run shared by both spans.
    pub longest: usize,
    pub alpha: f64,
    pub beta: f64,
}

/// Length of the longest common contiguous run of `a` and `b`.
pub fn longest_common_run(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    let mut best = 0;
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { 0 };
            best = best.max(cur[j + 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

pub fn match_spans(gold: &[String], detected: &[String], theta: f64) -> Result<MatchVerdict, SpanError> {
    check_theta(theta)?;
    if gold.is_empty() || detected.is_empty() {
        return Err(SpanError::EmptySpan);
    }
    let longest = longest_common_run(gold, detected);
    let alpha = longest as f64 / gold.len() as f64;
    let beta = longest as f64 / detected.len() as f64;
    Ok(MatchVerdict { matched: longest > 0 && alpha >= theta && beta >= theta, longest, alpha, beta })
}

/// Greedy one-to-one assignment at `theta`: matching pairs are taken in
/// descending order of shared run length, ties by (detected, gold) index.
/// Returns the (detected, gold) index pairs. Empty spans never match.
pub fn assign(detected: &[Vec<String>], gold: &[Vec<String>], theta: f64) -> Result<Vec<(usize, usize)>, SpanError> {
    check_theta(theta)?;
    let mut candidates = Vec::new();
    for (i, e) in detected.iter().enumerate() {
        for (j, g) in gold.iter().enumerate() {
            if e.is_empty() || g.is_empty() {
                continue;
            }
            let v = match_spans(g, e, theta)?;
            if v.matched {
                candidates.push((v.longest, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let (mut used_d, mut used_g) = (BTreeSet::new(), BTreeSet::new());
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_d.contains(&i) && !used_g.contains(&j) {
            used_d.insert(i);
            used_g.insert(j);
            pairs.push((i, j));
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// From counts, with empty-set conventions: no detections gives
    /// precision 1 only when there is no gold, and vice versa for recall.
    pub fn from_counts(matched: usize, detected: usize, gold: usize) -> Prf {
        let precision = if detected == 0 { f64::from(u8::from(gold == 0)) } else { matched as f64 / detected as f64 };
        let recall = if gold == 0 { f64::from(u8::from(detected == 0)) } else { matched as f64 / gold as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Prf { precision, recall, f1 }
    }
}

pub fn prf(detected: &[Vec<String>], gold: &[Vec<String>], theta: f64) -> Result<Prf, SpanError> {
    let matched = assign(detected, gold, theta)?.len();
    Ok(Prf::from_counts(matched, detected.len(), gold.len()))
}

/// Span texts per (system, seg_id).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpanSet {
    pub spans: BTreeMap<(String, String), Vec<String>>,
}

impl SpanSet {
    pub fn push(&mut self, system: &str, seg_id: &str, span: &str) {
        self.spans.entry((system.to_string(), seg_id.to_string())).or_default().push(span.to_string());
    }

    pub fn len(&self) -> usize {
        self.spans.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Gold spans of a dataset.
    pub fn from_gold(d: &Dataset) -> SpanSet {
        let mut s = SpanSet::default();
        for g in &d.gold {
            s.push(&g.system, &g.seg_id, &g.span_text);
        }
        s
    }

    /// Spans of confirmed findings.
    pub fn from_results(results: &[SegmentResult]) -> SpanSet {
        let mut s = SpanSet::default();
        for r in results {
            for f in r.confirmed() {
                s.push(&r.system, &r.seg_id, &f.span_text);
            }
        }
        s
    }

    /// Reads a TSV whose header names `system`, `seg_id` and `span_text`
    /// columns; other columns are ignored.
    pub fn from_tsv(name: &str, text: &str) -> Result<SpanSet, SpanError> {
        let err = |line: usize, message: String| SpanError::Parse { file: name.to_string(), line, message };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut s = SpanSet::default();
        let Some((hline, header)) = lines.next() else {
            return Ok(s);
        };
        let cols: Vec<&str> = header.trim_end_matches('\r').split('\t').map(str::trim).collect();
        let find = |want: &str| {
            cols.iter().position(|c| *c == want).ok_or_else(|| err(hline + 1, format!("header lacks a `{want}` column")))
        };
        let (sys, seg, span) = (find("system")?, find("seg_id")?, find("span_text")?);
        for (i, line) in lines {
            let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
            if fields.len() != cols.len() {
                return Err(err(i + 1, format!("expected {} columns, found {}", cols.len(), fields.len())));
            }
            let text = unescape_field(fields[span]);
            if text.trim().is_empty() {
                return Err(err(i + 1, "empty span_text".into()));
            }
            s.push(fields[sys], fields[seg], &text);
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<SpanSet, SpanError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SpanError::Io { path: path.display().to_string(), message: e.to_string() })?;
        SpanSet::from_tsv(&path.display().to_string(), &text)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("system\tseg_id\tspan_text\n");
        for ((system, seg_id), spans) in &self.spans {
            for span in spans {
                let _ = writeln!(out, "{system}\t{seg_id}\t{}", crate::corpus::escape_field(span));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub theta: f64,
    pub matched: usize,
    pub detected: usize,
    pub gold: usize,
    pub prf: Prf,
}

/// Micro-averaged P/R/F1 over all segments at each threshold, one row per
/// threshold in the given order.
pub fn sweep(
    detected: &SpanSet,
    gold: &SpanSet,
    thetas: &[f64],
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<SweepRow>, SpanError> {
    for &t in thetas {
        check_theta(t)?;
    }
    let keys: BTreeSet<&(String, String)> = detected.spans.keys().chain(gold.spans.keys()).collect();
    let tokenized: Vec<(Vec<Vec<String>>, Vec<Vec<String>>)> = keys
        .into_iter()
        .map(|k| {
            let tok = |set: &SpanSet| -> Vec<Vec<String>> {
                set.spans.get(k).map_or_else(Vec::new, |v| v.iter().map(|s| tokenizer.tokenize(s)).collect())
            };
            (tok(detected), tok(gold))
        })
        .collect();
    let n_detected = detected.len();
    let n_gold = gold.len();
    thetas
        .iter()
        .map(|&theta| {
            let mut matched = 0;
            for (d, g) in &tokenized {
                matched += assign(d, g, theta)?.len();
            }
            Ok(SweepRow {
                theta,
                matched,
                detected: n_detected,
                gold: n_gold,
                prf: Prf::from_counts(matched, n_detected, n_gold),
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("theta,precision,recall,f1\n");
    for r in rows {
        let _ = writeln!(out, "{:.6},{:.6},{:.6},{:.6}", r.theta, r.prf.precision, r.prf.recall, r.prf.f1);
    }
    out
}

/// θ = 0.1, 0.2, …, 1.0.
pub fn default_thetas() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}
