//! MQM error hierarchy: core categories, their subtypes, and the
//! (subtype, severity) weight table used for scoring.
//!
//! A typology is loaded from a TOML document. The bundled default has five
//! core categories and nineteen subtypes; any other two-tier hierarchy with a
//! complete weight table can be substituted.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// The bundled default typology document.
pub const DEFAULT_TYPOLOGY: &str = include_str!("../assets/typology.toml");

#[derive(Debug, Error, PartialEq)]
pub enum TypologyError {
    #[error("malformed typology document: {0}")]
    Malformed(String),
    #[error("duplicate core id `{0}`")]
    DuplicateCore(String),
    #[error("duplicate subtype id `{0}`")]
    DuplicateSubtype(String),
    #[error("dangling core reference `{core_id}` in subtype `{subtype_id}`")]
    DanglingCore { subtype_id: String, core_id: String },
    #[error("weight row references unknown subtype `{0}`")]
    UnknownWeightSubtype(String),
    #[error("missing weight entry for ({subtype}, {severity})")]
    MissingWeight { subtype: String, severity: Severity },
    #[error("neutral weight must be 0 (subtype `{0}`)")]
    NonZeroNeutral(String),
    #[error("invalid weight `{0}`: expected a nonnegative decimal")]
    BadWeight(String),
    #[error("unknown subtype `{0}`")]
    UnknownSubtype(String),
    #[error("unknown core category `{0}`")]
    UnknownCore(String),
    #[error("invalid severity `{0}` (expected Major, Minor or Neutral)")]
    BadSeverity(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    Major,
    Minor,
    Neutral,
}

impl Severity {
    pub const ALL: [Severity; 3] = [Severity::Major, Severity::Minor, Severity::Neutral];

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Major => "Major",
            Severity::Minor => "Minor",
            Severity::Neutral => "Neutral",
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Severity {
    type Err = TypologyError;

    /// Case-insensitive; surrounding whitespace is ignored.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "major" => Ok(Severity::Major),
            "minor" => Ok(Severity::Minor),
            "neutral" => Ok(Severity::Neutral),
            _ => Err(TypologyError::BadSeverity(s.to_string())),
        }
    }
}

/// An exact nonnegative error weight.
///
/// Stored as a rational so that sums such as ten Minor punctuation errors
/// add up to exactly 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Weight(Ratio<i64>);

impl Weight {
    pub const ZERO: Weight = Weight(Ratio::new_raw(0, 1));

    pub fn from_integer(n: i64) -> Self {
        Weight(Ratio::from_integer(n))
    }

    pub fn ratio(self) -> Ratio<i64> {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    pub fn is_zero(self) -> bool {
        *self.0.numer() == 0
    }

    /// Parses a plain decimal such as `5`, `0.1` or `.25` exactly.
    pub fn parse_decimal(s: &str) -> Result<Self, TypologyError> {
        let bad = || TypologyError::BadWeight(s.to_string());
        let t = s.trim();
        let (int_part, frac_part) = match t.split_once('.') {
            Some((i, f)) => (i, f),
            None => (t, ""),
        };
        if (int_part.is_empty() && frac_part.is_empty())
            || !int_part.chars().all(|c| c.is_ascii_digit())
            || !frac_part.chars().all(|c| c.is_ascii_digit())
            || frac_part.len() > 12
        {
            return Err(bad());
        }
        let digits = format!("{int_part}{frac_part}");
        let numer: i64 = if digits.is_empty() { 0 } else { digits.parse().map_err(|_| bad())? };
        let denom = 10i64.pow(frac_part.len() as u32);
        Ok(Weight(Ratio::new(numer, denom)))
    }
}

impl fmt::Display for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}", self.to_f64())
        }
    }
}

impl std::iter::Sum for Weight {
    fn sum<I: Iterator<Item = Weight>>(iter: I) -> Self {
        Weight(iter.fold(Ratio::from_integer(0), |acc, w| acc + w.0))
    }
}

/// A segment score: the negated sum of weights over confirmed errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Score(Ratio<i64>);

impl Score {
    pub const ZERO: Score = Score(Ratio::new_raw(0, 1));

    pub fn from_penalty(total: Weight) -> Self {
        Score(-total.0)
    }

    pub fn ratio(self) -> Ratio<i64> {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }
}

impl std::iter::Sum for Score {
    fn sum<I: Iterator<Item = Score>>(iter: I) -> Self {
        Score(iter.fold(Ratio::from_integer(0), |acc, s| acc + s.0))
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreCategory {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtype {
    pub id: String,
    pub core_id: String,
    pub name: String,
    pub description: String,
}

/// Total mapping (subtype, severity) → weight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightTable {
    entries: HashMap<(String, Severity), Weight>,
}

impl WeightTable {
    pub fn get(&self, subtype: &str, severity: Severity) -> Option<Weight> {
        self.entries.get(&(subtype.to_string(), severity)).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Typology {
    pub cores: Vec<CoreCategory>,
    pub subtypes: Vec<Subtype>,
    pub weights: WeightTable,
    pub severity_definition: String,
    digest: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TypologyDoc {
    #[serde(default)]
    severity_definition: String,
    cores: Vec<CoreCategory>,
    subtypes: Vec<Subtype>,
    weights: Vec<WeightRow>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightRow {
    subtype_id: String,
    severity: String,
    weight: WeightValue,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum WeightValue {
    Text(String),
    Int(i64),
    Float(f64),
}

impl WeightValue {
    fn to_weight(&self) -> Result<Weight, TypologyError> {
        match self {
            WeightValue::Text(s) => Weight::parse_decimal(s),
            WeightValue::Int(n) if *n >= 0 => Ok(Weight::from_integer(*n)),
            WeightValue::Int(n) => Err(TypologyError::BadWeight(n.to_string())),
            // Shortest round-trip formatting recovers the literal written in the file.
            WeightValue::Float(x) if x.is_finite() && *x >= 0.0 => {
                Weight::parse_decimal(&format!("{x}"))
            }
            WeightValue::Float(x) => Err(TypologyError::BadWeight(x.to_string())),
        }
    }
}

/// Parses and validates a typology document.
pub fn load_typology(document: &str) -> Result<Typology, TypologyError> {
    let doc: TypologyDoc =
        toml::from_str(document).map_err(|e| TypologyError::Malformed(e.to_string()))?;

    let mut core_ids = HashSet::new();
    for core in &doc.cores {
        if !core_ids.insert(core.id.as_str()) {
            return Err(TypologyError::DuplicateCore(core.id.clone()));
        }
    }
    let mut subtype_ids = HashSet::new();
    for sub in &doc.subtypes {
        if !subtype_ids.insert(sub.id.as_str()) {
            return Err(TypologyError::DuplicateSubtype(sub.id.clone()));
        }
        if !core_ids.contains(sub.core_id.as_str()) {
            return Err(TypologyError::DanglingCore {
                subtype_id: sub.id.clone(),
                core_id: sub.core_id.clone(),
            });
        }
    }

    let mut fallback: HashMap<Severity, Weight> = HashMap::new();
    let mut specific: HashMap<(String, Severity), Weight> = HashMap::new();
    for row in &doc.weights {
        let severity: Severity = row.severity.parse()?;
        let weight = row.weight.to_weight()?;
        if row.subtype_id == "*" {
            fallback.insert(severity, weight);
        } else if subtype_ids.contains(row.subtype_id.as_str()) {
            specific.insert((row.subtype_id.clone(), severity), weight);
        } else {
            return Err(TypologyError::UnknownWeightSubtype(row.subtype_id.clone()));
        }
    }

    let mut entries = HashMap::new();
    for sub in &doc.subtypes {
        for severity in Severity::ALL {
            let key = (sub.id.clone(), severity);
            let weight = specific
                .get(&key)
                .or_else(|| fallback.get(&severity))
                .copied()
                .ok_or_else(|| TypologyError::MissingWeight {
                    subtype: sub.id.clone(),
                    severity,
                })?;
            if severity == Severity::Neutral && !weight.is_zero() {
                return Err(TypologyError::NonZeroNeutral(sub.id.clone()));
            }
            entries.insert(key, weight);
        }
    }

    Ok(Typology {
        cores: doc.cores,
        subtypes: doc.subtypes,
        weights: WeightTable { entries },
        severity_definition: doc.severity_definition,
        digest: hex::encode(Sha256::digest(document.as_bytes())),
    })
}

impl Typology {
    /// The bundled 5-core / 19-subtype typology.
    pub fn default_mqm() -> Typology {
        load_typology(DEFAULT_TYPOLOGY).expect("bundled typology is valid")
    }

    /// SHA-256 of the source document.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn weight_of(&self, subtype: &str, severity: Severity) -> Result<Weight, TypologyError> {
        self.weights
            .get(subtype, severity)
            .ok_or_else(|| TypologyError::UnknownSubtype(subtype.to_string()))
    }

    /// Children of `core` in document order.
    pub fn subtypes_of(&self, core: &str) -> Result<Vec<&Subtype>, TypologyError> {
        if self.core(core).is_none() {
            return Err(TypologyError::UnknownCore(core.to_string()));
        }
        Ok(self.subtypes.iter().filter(|s| s.core_id == core).collect())
    }

    pub fn core(&self, id: &str) -> Option<&CoreCategory> {
        self.cores.iter().find(|c| c.id == id)
    }

    pub fn subtype(&self, id: &str) -> Option<&Subtype> {
        self.subtypes.iter().find(|s| s.id == id)
    }

    pub fn core_of(&self, subtype: &Subtype) -> &CoreCategory {
        self.core(&subtype.core_id)
            .expect("core references are validated at load")
    }

    pub fn subtype_index(&self, id: &str) -> Option<usize> {
        self.subtypes.iter().position(|s| s.id == id)
    }

    /// Resolves a display name or id as written by a model, e.g.
    /// `mistranslation`, `Untranslated Text` or `untranslated_text`.
    pub fn find_subtype_by_name(&self, name: &str) -> Option<&Subtype> {
        let wanted = normalize_name(name);
        if wanted.is_empty() {
            return None;
        }
        self.subtypes
            .iter()
            .find(|s| normalize_name(&s.name) == wanted || normalize_name(&s.id) == wanted)
    }
}

fn normalize_name(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
severity_definition = "x"
[[cores]]
id = "c"
name = "Core"
[[subtypes]]
id = "s"
core_id = "c"
name = "Sub"
description = "d"
[[weights]]
subtype_id = "*"
severity = "Major"
weight = 5
[[weights]]
subtype_id = "*"
severity = "Minor"
weight = 1
[[weights]]
subtype_id = "*"
severity = "Neutral"
weight = 0
"#;

    #[test]
    fn default_has_five_cores_nineteen_subtypes() {
        let t = Typology::default_mqm();
        assert_eq!(t.cores.len(), 5);
        assert_eq!(t.subtypes.len(), 19);
        assert!(t.find_subtype_by_name("non-translation").is_none());
    }

    #[test]
    fn default_weights() {
        let t = Typology::default_mqm();
        assert_eq!(t.weight_of("mistranslation", Severity::Major).unwrap(), Weight::from_integer(5));
        assert_eq!(
            t.weight_of("punctuation", Severity::Minor).unwrap(),
            Weight::parse_decimal("0.1").unwrap()
        );
        assert_eq!(t.weight_of("addition", Severity::Neutral).unwrap(), Weight::ZERO);
        assert_eq!(
            t.weight_of("nope", Severity::Major),
            Err(TypologyError::UnknownSubtype("nope".into()))
        );
    }

    #[test]
    fn subtypes_of_follows_file_order() {
        let t = Typology::default_mqm();
        let names: Vec<_> = t.subtypes_of("accuracy").unwrap().iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["Addition", "Omission", "Mistranslation", "Untranslated text"]);
        let style: Vec<_> = t.subtypes_of("style").unwrap().iter().map(|s| s.name.as_str()).collect();
        assert_eq!(style, ["Awkward"]);
        assert!(matches!(t.subtypes_of("x"), Err(TypologyError::UnknownCore(_))));
    }

    #[test]
    fn minimal_typology() {
        let t = load_typology(MINIMAL).unwrap();
        assert_eq!((t.cores.len(), t.subtypes.len()), (1, 1));
        let subs = t.subtypes_of("c").unwrap();
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].id, "s");
    }

    #[test]
    fn dangling_core_is_rejected() {
        let doc = MINIMAL.replace("core_id = \"c\"", "core_id = \"zzz\"");
        let err = load_typology(&doc).unwrap_err();
        assert!(err.to_string().contains("dangling core reference"));
    }

    #[test]
    fn duplicate_ids_and_missing_weights() {
        let dup = format!("{MINIMAL}\n[[cores]]\nid = \"c\"\nname = \"Again\"\n");
        assert_eq!(load_typology(&dup).unwrap_err(), TypologyError::DuplicateCore("c".into()));

        let missing = MINIMAL.replace("severity = \"Minor\"\nweight = 1", "severity = \"Major\"\nweight = 1");
        assert!(matches!(
            load_typology(&missing),
            Err(TypologyError::MissingWeight { severity: Severity::Minor, .. })
        ));
    }

    #[test]
    fn nonzero_neutral_rejected() {
        let doc = MINIMAL.replace("severity = \"Neutral\"\nweight = 0", "severity = \"Neutral\"\nweight = 2");
        assert_eq!(load_typology(&doc).unwrap_err(), TypologyError::NonZeroNeutral("s".into()));
    }

    #[test]
    fn malformed_document() {
        assert!(matches!(load_typology("cores = 3"), Err(TypologyError::Malformed(_))));
    }

    #[test]
    fn severity_parsing() {
        assert_eq!("major".parse::<Severity>().unwrap(), Severity::Major);
        assert_eq!(" Neutral ".parse::<Severity>().unwrap(), Severity::Neutral);
        assert!("critical".parse::<Severity>().is_err());
    }

    #[test]
    fn decimal_weights_are_exact() {
        let tenth = Weight::parse_decimal("0.1").unwrap();
        let total: Weight = std::iter::repeat_n(tenth, 10).sum();
        assert_eq!(total, Weight::from_integer(1));
        assert!(Weight::parse_decimal("-1").is_err());
        assert!(Weight::parse_decimal("abc").is_err());
        assert_eq!(Weight::parse_decimal(".25").unwrap().to_f64(), 0.25);
    }

    #[test]
    fn fuzzy_subtype_lookup() {
        let t = Typology::default_mqm();
        assert_eq!(t.find_subtype_by_name("untranslated TEXT").unwrap().id, "untranslated_text");
        assert_eq!(t.find_subtype_by_name("inappropriate_for_context").unwrap().id, "inappropriate_for_context");
        assert!(t.find_subtype_by_name("").is_none());
    }
}
