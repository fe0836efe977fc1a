//! Agreement between metric scores and gold scores: segment-level rank
//! correlations and errors, and system-level meta-evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

pub type Key = (String, String);

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("duplicate key ({}, {})", .0.0, .0.1)]
    DuplicateKey(Key),
    #[error("key sets differ: {} only in the metric series, {} only in the gold series{}", only_left.len(), only_right.len(), key_diff(only_left, only_right))]
    KeyMismatch { only_left: Vec<Key>, only_right: Vec<Key> },
    #[error("need at least {need} values, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("expected {expected} components, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("no comparable pairs")]
    NoPairs,
    #[error("non-finite value {value} for ({}, {})", .key.0, .key.1)]
    NonFinite { key: Key, value: f64 },
    #[error("{file} line {line}: {message}")]
    Parse { file: String, line: usize, message: String },
}

fn key_diff(left: &[Key], right: &[Key]) -> String {
    let mut s = String::new();
    for (k, side) in left.iter().map(|k| (k, "metric")).chain(right.iter().map(|k| (k, "gold"))).take(20) {
        let _ = write!(s, "\n  only in {side}: {}\t{}", k.0, k.1);
    }
    s
}

/// Scores keyed by (system, seg_id), in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSeries {
    keys: Vec<Key>,
    values: Vec<f64>,
    index: BTreeMap<Key, usize>,
}

impl ScoreSeries {
    pub fn new(pairs: impl IntoIterator<Item = (Key, f64)>) -> Result<Self, MetricError> {
        let mut s = ScoreSeries::default();
        for (k, v) in pairs {
            s.push(k, v)?;
        }
        Ok(s)
    }

    pub fn push(&mut self, key: Key, value: f64) -> Result<(), MetricError> {
        if !value.is_finite() {
            return Err(MetricError::NonFinite { key, value });
        }
        if self.index.contains_key(&key) {
            return Err(MetricError::DuplicateKey(key));
        }
        self.index.insert(key.clone(), self.keys.len());
        self.keys.push(key);
        self.values.push(value);
        Ok(())
    }

    /// Unkeyed values, keyed ("", position).
    pub fn from_values(values: &[f64]) -> Result<Self, MetricError> {
        ScoreSeries::new(values.iter().enumerate().map(|(i, v)| ((String::new(), i.to_string()), *v)))
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[Key] {
        &self.keys
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, system: &str, seg_id: &str) -> Option<f64> {
        self.index.get(&(system.to_string(), seg_id.to_string())).map(|&i| self.values[i])
    }

    /// Mean score per system.
    pub fn system_means(&self) -> BTreeMap<String, f64> {
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for ((system, _), v) in self.keys.iter().zip(&self.values) {
            let e = acc.entry(system.clone()).or_default();
            e.0 += v;
            e.1 += 1;
        }
        acc.into_iter().map(|(k, (sum, n))| (k, sum / n as f64)).collect()
    }

    /// Reads a TSV with header `system seg_id score`.
    pub fn from_tsv(file: &str, text: &str) -> Result<Self, MetricError> {
        let err = |line: usize, message: String| MetricError::Parse { file: file.to_string(), line, message };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut s = ScoreSeries::default();
        let Some((hl, header)) = lines.next() else {
            return Ok(s);
        };
        let cols: Vec<&str> = header.trim_end_matches('\r').split('\t').map(str::trim).collect();
        if cols != ["system", "seg_id", "score"] {
            return Err(err(hl + 1, "expected header `system\\tseg_id\\tscore`".into()));
        }
        for (i, line) in lines {
            let f: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
            if f.len() != 3 {
                return Err(err(i + 1, format!("expected 3 columns, found {}", f.len())));
            }
            let v: f64 = f[2].trim().parse().map_err(|_| err(i + 1, format!("invalid score `{}`", f[2])))?;
            s.push((f[0].to_string(), f[1].to_string()), v).map_err(|e| err(i + 1, e.to_string()))?;
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, MetricError> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|e| MetricError::Parse { file: name.clone(), line: 0, message: e.to_string() })?;
        ScoreSeries::from_tsv(&name, &text)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("system\tseg_id\tscore\n");
        for ((system, seg), v) in self.keys.iter().zip(&self.values) {
            let _ = writeln!(out, "{system}\t{seg}\t{v}");
        }
        out
    }
}

/// Values of `a` and `b` paired by key, in `a`'s order.
pub fn align(a: &ScoreSeries, b: &ScoreSeries) -> Result<(Vec<f64>, Vec<f64>), MetricError> {
    let ka: BTreeSet<&Key> = a.keys.iter().collect();
    let kb: BTreeSet<&Key> = b.keys.iter().collect();
    if ka != kb {
        return Err(MetricError::KeyMismatch {
            only_left: ka.difference(&kb).map(|k| (*k).clone()).collect(),
            only_right: kb.difference(&ka).map(|k| (*k).clone()).collect(),
        });
    }
    let ys = a.keys.iter().map(|k| b.values[b.index[k]]).collect();
    Ok((a.values.clone(), ys))
}

fn need(n: usize, k: usize) -> Result<(), MetricError> {
    if n < k {
        Err(MetricError::TooFew { need: k, got: n })
    } else {
        Ok(())
    }
}

/// Tie-corrected Kendall tau (tau-b) of paired values.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    assert_eq!(x.len(), y.len(), "paired slices");
    let n = x.len();
    need(n, 2)?;
    let (mut concordant, mut discordant, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i].total_cmp(&x[j]) as i64;
            let dy = y[i].total_cmp(&y[j]) as i64;
            if dx == 0 {
                tie_x += 1;
            }
            if dy == 0 {
                tie_y += 1;
            }
            match dx * dy {
                1 => concordant += 1,
                -1 => discordant += 1,
                _ => {}
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    if tie_x == n0 || tie_y == n0 {
        return Err(MetricError::ZeroVariance);
    }
    Ok((concordant - discordant) as f64 / (((n0 - tie_x) as f64) * ((n0 - tie_y) as f64)).sqrt())
}

/// 1-based ranks; tied values share their mean rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    assert_eq!(x.len(), y.len(), "paired slices");
    let n = x.len();
    need(n, 2)?;
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    pearson_r(&average_ranks(x), &average_ranks(y))
}

pub fn kendall_tau(a: &ScoreSeries, b: &ScoreSeries) -> Result<f64, MetricError> {
    let (x, y) = align(a, b)?;
    kendall_tau_b(&x, &y)
}

pub fn spearman(a: &ScoreSeries, b: &ScoreSeries) -> Result<f64, MetricError> {
    let (x, y) = align(a, b)?;
    spearman_rho(&x, &y)
}

pub fn pearson(a: &ScoreSeries, b: &ScoreSeries) -> Result<f64, MetricError> {
    let (x, y) = align(a, b)?;
    pearson_r(&x, &y)
}

fn min_max(x: &[f64]) -> Vec<f64> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Mean absolute and mean squared error, optionally after min-max scaling
/// each series to [0, 1] (a constant series scales to zeros).
pub fn mae_mse_values(x: &[f64], y: &[f64], normalize: bool) -> Result<(f64, f64), MetricError> {
    assert_eq!(x.len(), y.len(), "paired slices");
    need(x.len(), 1)?;
    let (x, y) = if normalize { (min_max(x), min_max(y)) } else { (x.to_vec(), y.to_vec()) };
    let n = x.len() as f64;
    let mae = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let mse = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    Ok((mae, mse))
}

pub fn mae_mse(a: &ScoreSeries, b: &ScoreSeries, normalize: bool) -> Result<(f64, f64), MetricError> {
    let (x, y) = align(a, b)?;
    mae_mse_values(&x, &y, normalize)
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Fraction of system pairs ordered the same way by both score maps. A tie
/// agrees only with a tie.
pub fn system_pairwise_accuracy(
    metric: &BTreeMap<String, f64>,
    gold: &BTreeMap<String, f64>,
) -> Result<f64, MetricError> {
    let km: BTreeSet<&String> = metric.keys().collect();
    let kg: BTreeSet<&String> = gold.keys().collect();
    if km != kg {
        let wrap = |s: BTreeSet<&&String>| s.into_iter().map(|k| ((*k).clone(), String::new())).collect();
        return Err(MetricError::KeyMismatch {
            only_left: wrap(km.difference(&kg).collect()),
            only_right: wrap(kg.difference(&km).collect()),
        });
    }
    let systems: Vec<&String> = km.into_iter().collect();
    need(systems.len(), 2)?;
    let (mut agree, mut total) = (0usize, 0usize);
    for i in 0..systems.len() {
        for j in i + 1..systems.len() {
            let dm = metric[systems[i]] - metric[systems[j]];
            let dg = gold[systems[i]] - gold[systems[j]];
            agree += usize::from(sign(dm) == sign(dg));
            total += 1;
        }
    }
    Ok(agree as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AccuracyT {
    pub accuracy: f64,
    /// Metric tie tolerance used.
    pub epsilon: f64,
    /// True when `epsilon` was chosen by search rather than supplied.
    pub epsilon_searched: bool,
    pub pairs: usize,
}

/// Pairwise accuracy with tie calibration over pairs of systems scored on
/// the same segment. A metric pair ties when its difference is at most ε, a
/// gold pair when its difference is zero. Without an ε, the value among 0
/// and the observed metric differences that maximizes accuracy is used
/// (smallest on ties).
pub fn accuracy_t(metric: &ScoreSeries, gold: &ScoreSeries, epsilon: Option<f64>) -> Result<AccuracyT, MetricError> {
    let (x, y) = align(metric, gold)?;
    let mut by_seg: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (_, seg)) in metric.keys.iter().enumerate() {
        by_seg.entry(seg.as_str()).or_default().push(i);
    }
    // (|Δmetric|, gold tie, order agrees when neither ties)
    let mut pairs: Vec<(f64, bool, bool)> = Vec::new();
    for idx in by_seg.values() {
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                let (dm, dg) = (x[i] - x[j], y[i] - y[j]);
                pairs.push((dm.abs(), dg == 0.0, sign(dm) == sign(dg)));
            }
        }
    }
    if pairs.is_empty() {
        return Err(MetricError::NoPairs);
    }
    let n = pairs.len();
    let correct_at = |eps: f64| {
        pairs
            .iter()
            .filter(|(d, gold_tie, same)| if *d <= eps { *gold_tie } else { !gold_tie && *same })
            .count()
    };
    if let Some(eps) = epsilon {
        return Ok(AccuracyT { accuracy: correct_at(eps) as f64 / n as f64, epsilon: eps, epsilon_searched: false, pairs: n });
    }

    // Sweep ε upward: each pair moves from "non-tie" to "tie" once ε reaches
    // its metric difference.
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut correct = pairs.iter().filter(|(_, gold_tie, same)| !gold_tie && *same).count() as i64;
    let (mut best, mut best_eps) = (i64::MIN, 0.0);
    let mut k = 0;
    let mut candidates: Vec<f64> = vec![0.0];
    candidates.extend(pairs.iter().map(|p| p.0));
    candidates.dedup();
    for eps in candidates {
        while k < n && pairs[k].0 <= eps {
            let (_, gold_tie, same) = pairs[k];
            correct += i64::from(gold_tie) - i64::from(!gold_tie && same);
            k += 1;
        }
        if correct > best {
            best = correct;
            best_eps = eps;
        }
    }
    Ok(AccuracyT { accuracy: best as f64 / n as f64, epsilon: best_eps, epsilon_searched: true, pairs: n })
}

/// Arithmetic mean of exactly four components.
pub fn meta_score(components: &[f64]) -> Result<f64, MetricError> {
    if components.len() != 4 {
        return Err(MetricError::Arity { expected: 4, got: components.len() });
    }
    Ok(components.iter().sum::<f64>() / 4.0)
}

/// Rounds half away from zero at `digits` decimals, treating `x` as the
/// decimal it prints as (0.7305 rounds to 0.731 although its binary value
/// is slightly below).
pub fn round_half_up(x: f64, digits: usize) -> f64 {
    const EXTRA: usize = 6;
    let text = format!("{:.*}", digits + EXTRA, x.abs());
    let n: u128 = text.replace('.', "").parse().expect("formatted digits");
    let unit = 10u128.pow(EXTRA as u32);
    let q = (n + unit / 2) / unit;
    x.signum() * q as f64 / 10f64.powi(digits as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetaReport {
    pub sys_pairwise_acc: f64,
    pub sys_pearson: f64,
    pub seg_accuracy_t: f64,
    pub seg_pearson: f64,
    pub meta: f64,
    pub epsilon: f64,
    pub epsilon_searched: bool,
    pub seg_pairs: usize,
    pub systems: usize,
    pub segments: usize,
}

/// System scores are per-system means of segment scores; segment-level
/// Pearson is taken over all (system, segment) scores at once.
pub fn meta_evaluate(metric: &ScoreSeries, gold: &ScoreSeries, epsilon: Option<f64>) -> Result<MetaReport, MetricError> {
    align(metric, gold)?;
    let (ms, gs) = (metric.system_means(), gold.system_means());
    let sys_pairwise_acc = system_pairwise_accuracy(&ms, &gs)?;
    let sys_pearson = pearson_r(&ms.values().copied().collect::<Vec<_>>(), &gs.values().copied().collect::<Vec<_>>())?;
    let acc = accuracy_t(metric, gold, epsilon)?;
    let seg_pearson = pearson(metric, gold)?;
    let meta = meta_score(&[sys_pairwise_acc, sys_pearson, acc.accuracy, seg_pearson])?;
    Ok(MetaReport {
        sys_pairwise_acc,
        sys_pearson,
        seg_accuracy_t: acc.accuracy,
        seg_pearson,
        meta,
        epsilon: acc.epsilon,
        epsilon_searched: acc.epsilon_searched,
        seg_pairs: acc.pairs,
        systems: ms.len(),
        segments: metric.keys.iter().map(|k| &k.1).collect::<BTreeSet<_>>().len(),
    })
}

impl MetaReport {
    /// Header plus one row: name, meta, then the four components.
    pub fn to_csv(&self, name: &str) -> String {
        format!(
            "metric,meta,sys_pairwise_acc,sys_pearson,seg_accuracy_t,seg_pearson\n{name},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            self.meta, self.sys_pairwise_acc, self.sys_pearson, self.seg_accuracy_t, self.seg_pearson
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SegmentAgreement {
    pub kendall_tau: f64,
    pub spearman: f64,
    pub mae: f64,
    pub mse: f64,
    pub normalized: bool,
    pub n: usize,
}

pub fn segment_agreement(metric: &ScoreSeries, gold: &ScoreSeries, normalize: bool) -> Result<SegmentAgreement, MetricError> {
    let (x, y) = align(metric, gold)?;
    let (mae, mse) = mae_mse_values(&x, &y, normalize)?;
    Ok(SegmentAgreement {
        kendall_tau: kendall_tau_b(&x, &y)?,
        spearman: spearman_rho(&x, &y)?,
        mae,
        mse,
        normalized: normalize,
        n: x.len(),
    })
}
