//! Agent prompt rendering.
//!
//! Templates are plain text with `{Name}` slots. Rendering is a single pass:
//! slot values are inserted literally and never re-scanned, so braces inside
//! a source sentence cannot be mistaken for slots.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::corpus::Segment;
use crate::gateway::ChatMessage;
use crate::typology::{CoreCategory, Subtype};

pub const DEFAULT_PROMPTS: &str = include_str!("../assets/prompts.toml");
pub const DEFAULT_DEMOS: &str = include_str!("../assets/demos.toml");
pub const DEFAULT_DEMO_COUNT: usize = 2;

/// Placeholder for an empty discussion history.
pub const EMPTY_HISTORY: &str = "(none)";

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("unresolved slot {{{0}}}")]
    UnresolvedSlot(String),
    #[error("unclosed slot starting at byte {0}")]
    UnclosedSlot(usize),
    #[error("stray '}}' at byte {0}")]
    StrayBrace(usize),
    #[error("correction requires at least one finding")]
    EmptyFindings,
    #[error("verification requires a non-empty corrected translation")]
    EmptyCorrection,
    #[error("a tier-2 turn requires a prior tier-1 turn")]
    EmptyHistory,
    #[error("discussion turns must alternate starting with tier-1; got {0} at turn {1}")]
    Alternation(Speaker, usize),
    #[error("malformed prompt file: {0}")]
    Malformed(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

/// Substitutes `{Name}` slots from `bindings`. `{{` and `}}` produce literal
/// braces.
pub fn render_template(template: &str, bindings: &BTreeMap<&str, String>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    let mut offset = 0;
    while let Some(i) = rest.find(['{', '}']) {
        out.push_str(&rest[..i]);
        let pos = offset + i;
        let tail = &rest[i..];
        if let Some(r) = tail.strip_prefix("{{") {
            out.push('{');
            rest = r;
            offset = pos + 2;
        } else if let Some(r) = tail.strip_prefix("}}") {
            out.push('}');
            rest = r;
            offset = pos + 2;
        } else if tail.starts_with('}') {
            return Err(PromptError::StrayBrace(pos));
        } else {
            let close = tail.find('}').ok_or(PromptError::UnclosedSlot(pos))?;
            let name = &tail[1..close];
            if name.contains(['{', '\n']) {
                return Err(PromptError::UnclosedSlot(pos));
            }
            let value = bindings.get(name).ok_or_else(|| PromptError::UnresolvedSlot(name.to_string()))?;
            out.push_str(value);
            rest = &tail[close + 1..];
            offset = pos + close + 1;
        }
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub system: String,
    pub user: String,
    /// Follow-up message sent after a reply that breaks the output format.
    pub reminder: String,
}

/// The five prompts of the pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSet {
    pub subtype_eval: PromptTemplate,
    pub correction: PromptTemplate,
    pub verification: PromptTemplate,
    pub tier1: PromptTemplate,
    pub tier2: PromptTemplate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    SubtypeEval,
    Correction,
    Verification,
    Tier1,
    Tier2,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LangPair {
    pub source: String,
    pub target: String,
}

impl LangPair {
    /// Parses `src-tgt` codes such as `zh-en`.
    pub fn parse(pair: &str) -> Result<Self, PromptError> {
        match pair.split_once('-') {
            Some((s, t)) if !s.is_empty() && !t.is_empty() => {
                Ok(LangPair { source: s.to_ascii_lowercase(), target: t.to_ascii_lowercase() })
            }
            _ => Err(PromptError::Malformed(format!("language pair {pair:?} is not of the form src-tgt"))),
        }
    }

    pub fn source_name(&self) -> &str {
        language_name(&self.source)
    }

    pub fn target_name(&self) -> &str {
        language_name(&self.target)
    }
}

impl fmt::Display for LangPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.source, self.target)
    }
}

const LANGUAGES: &[(&str, &str)] = &[
    ("ar", "Arabic"),
    ("cs", "Czech"),
    ("de", "German"),
    ("en", "English"),
    ("es", "Spanish"),
    ("fr", "French"),
    ("he", "Hebrew"),
    ("hi", "Hindi"),
    ("it", "Italian"),
    ("ja", "Japanese"),
    ("ko", "Korean"),
    ("nl", "Dutch"),
    ("pl", "Polish"),
    ("pt", "Portuguese"),
    ("ru", "Russian"),
    ("tr", "Turkish"),
    ("uk", "Ukrainian"),
    ("zh", "Chinese"),
];

/// English name of a language code; unknown codes are returned unchanged.
pub fn language_name(code: &str) -> &str {
    LANGUAGES
        .iter()
        .find(|(c, _)| c.eq_ignore_ascii_case(code))
        .map(|(_, n)| *n)
        .unwrap_or(code)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Speaker {
    Tier1,
    Tier2,
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Speaker::Tier1 => "tier-1",
            Speaker::Tier2 => "tier-2",
        })
    }
}

/// Alternating tier-1 / tier-2 turns, tier-1 first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiscussionTranscript {
    turns: Vec<(Speaker, String)>,
}

impl DiscussionTranscript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_turns(turns: Vec<(Speaker, String)>) -> Result<Self, PromptError> {
        let mut t = Self::new();
        for (speaker, text) in turns {
            t.push(speaker, text)?;
        }
        Ok(t)
    }

    pub fn push(&mut self, speaker: Speaker, text: impl Into<String>) -> Result<(), PromptError> {
        if speaker != self.next_speaker() {
            return Err(PromptError::Alternation(speaker, self.turns.len()));
        }
        self.turns.push((speaker, text.into()));
        Ok(())
    }

    pub fn next_speaker(&self) -> Speaker {
        match self.turns.last() {
            None | Some((Speaker::Tier2, _)) => Speaker::Tier1,
            Some((Speaker::Tier1, _)) => Speaker::Tier2,
        }
    }

    pub fn turns(&self) -> &[(Speaker, String)] {
        &self.turns
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn last_from(&self, speaker: Speaker) -> Option<&str> {
        self.turns.iter().rev().find(|(s, _)| *s == speaker).map(|(_, t)| t.as_str())
    }

    /// History block as quoted in discussion prompts.
    pub fn render(&self) -> String {
        if self.turns.is_empty() {
            return EMPTY_HISTORY.to_string();
        }
        self.turns
            .iter()
            .map(|(speaker, text)| {
                let who = match speaker {
                    Speaker::Tier1 => "Expert (tier-1)",
                    Speaker::Tier2 => "Evaluator (tier-2)",
                };
                format!("{who}: {text}")
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoExample {
    /// Subtype id, or `*` for an example shared by all subtypes.
    pub subtype: String,
    #[serde(default)]
    pub lang_pair: Option<String>,
    pub source: String,
    pub translation: String,
    #[serde(rename = "answer")]
    pub expected_findings_block: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoBank {
    #[serde(default)]
    pub demos: Vec<DemoExample>,
}

impl DemoBank {
    pub fn default_bank() -> Self {
        Self::from_toml(DEFAULT_DEMOS).expect("bundled demonstrations are valid")
    }

    pub fn from_toml(text: &str) -> Result<Self, PromptError> {
        toml::from_str(text).map_err(|e| PromptError::Malformed(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        Self::from_toml(&read(path)?)
    }

    /// Up to `count` examples for a subtype: subtype-specific ones first,
    /// then shared ones. Within each group, examples for the requested
    /// language pair come before pair-agnostic ones; other pairs are skipped.
    pub fn select(&self, subtype_id: &str, lang: &LangPair, count: usize) -> Vec<DemoExample> {
        let pair = lang.to_string();
        let usable = |d: &&DemoExample| d.lang_pair.as_deref().is_none_or(|p| p.eq_ignore_ascii_case(&pair));
        let mut picked: Vec<DemoExample> = Vec::new();
        for group in [subtype_id, "*"] {
            let mut candidates: Vec<&DemoExample> =
                self.demos.iter().filter(|d| d.subtype == group).filter(usable).collect();
            candidates.sort_by_key(|d| d.lang_pair.is_none());
            picked.extend(candidates.into_iter().cloned());
        }
        picked.truncate(count);
        picked
    }
}

fn read(path: &Path) -> Result<String, PromptError> {
    std::fs::read_to_string(path)
        .map_err(|e| PromptError::Io { path: path.display().to_string(), message: e.to_string() })
}

fn render_demonstrations(demos: &[DemoExample]) -> String {
    if demos.is_empty() {
        return String::new();
    }
    let mut out = String::from("Examples:\n");
    for (i, d) in demos.iter().enumerate() {
        out.push_str(&format!(
            "Example {}\nSource: {}\nTranslation: {}\nAnswer: {}\n\n",
            i + 1,
            d.source,
            d.translation,
            d.expected_findings_block
        ));
    }
    out
}

type Bindings = BTreeMap<&'static str, String>;

fn segment_bindings(seg: &Segment, lang: &LangPair) -> Bindings {
    let mut b = BTreeMap::new();
    b.insert("Source", seg.source.clone());
    b.insert("Source Sentence", seg.source.clone());
    b.insert("Translation", seg.translation.clone());
    b.insert("Source Language", lang.source_name().to_string());
    b.insert("Target Language", lang.target_name().to_string());
    b
}

fn subtype_bindings(b: &mut Bindings, sub: &Subtype) {
    b.insert("Error Type", sub.name.clone());
    b.insert("Error Definition", sub.description.clone());
}

impl PromptSet {
    pub fn default_set() -> Self {
        Self::from_toml(DEFAULT_PROMPTS).expect("bundled prompts are valid")
    }

    pub fn from_toml(text: &str) -> Result<Self, PromptError> {
        toml::from_str(text).map_err(|e| PromptError::Malformed(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        Self::from_toml(&read(path)?)
    }

    pub fn template(&self, stage: Stage) -> &PromptTemplate {
        match stage {
            Stage::SubtypeEval => &self.subtype_eval,
            Stage::Correction => &self.correction,
            Stage::Verification => &self.verification,
            Stage::Tier1 => &self.tier1,
            Stage::Tier2 => &self.tier2,
        }
    }

    fn messages(&self, stage: Stage, b: &Bindings) -> Result<Vec<ChatMessage>, PromptError> {
        let t = self.template(stage);
        Ok(vec![
            ChatMessage::system(render_template(&t.system, b)?),
            ChatMessage::user(render_template(t.user.trim_start_matches('\n'), b)?),
        ])
    }

    /// The format reminder for a stage, rendered for one subtype.
    pub fn reminder(&self, stage: Stage, sub: &Subtype) -> Result<ChatMessage, PromptError> {
        let mut b = BTreeMap::new();
        b.insert("Error Type", sub.name.clone());
        b.insert("Error Definition", sub.description.clone());
        Ok(ChatMessage::user(render_template(&self.template(stage).reminder, &b)?))
    }

    pub fn render_subtype_eval(
        &self,
        seg: &Segment,
        sub: &Subtype,
        severity_definition: &str,
        demos: &[DemoExample],
        lang: &LangPair,
    ) -> Result<Vec<ChatMessage>, PromptError> {
        let mut b = segment_bindings(seg, lang);
        subtype_bindings(&mut b, sub);
        b.insert("Severity Definition", severity_definition.to_string());
        b.insert("Demonstrations", render_demonstrations(demos));
        self.messages(Stage::SubtypeEval, &b)
    }

    pub fn render_correction(
        &self,
        seg: &Segment,
        sub: &Subtype,
        findings_block: &str,
        lang: &LangPair,
    ) -> Result<Vec<ChatMessage>, PromptError> {
        if findings_block.trim().is_empty() {
            return Err(PromptError::EmptyFindings);
        }
        let mut b = segment_bindings(seg, lang);
        subtype_bindings(&mut b, sub);
        b.insert("Error Information", findings_block.to_string());
        self.messages(Stage::Correction, &b)
    }

    pub fn render_verification(
        &self,
        original: &str,
        corrected: &str,
        findings_block: &str,
    ) -> Result<Vec<ChatMessage>, PromptError> {
        if corrected.trim().is_empty() {
            return Err(PromptError::EmptyCorrection);
        }
        let mut b = BTreeMap::new();
        b.insert("Original Translation", original.to_string());
        b.insert("Corrected Translation", corrected.to_string());
        b.insert("Error Information", findings_block.to_string());
        self.messages(Stage::Verification, &b)
    }

    pub fn render_tier1_turn(
        &self,
        seg: &Segment,
        core: &CoreCategory,
        sub: &Subtype,
        finding_block: &str,
        transcript: &DiscussionTranscript,
        lang: &LangPair,
    ) -> Result<Vec<ChatMessage>, PromptError> {
        let mut b = segment_bindings(seg, lang);
        subtype_bindings(&mut b, sub);
        b.insert("Core Category", core.name.clone());
        b.insert("Core Definition", core.description.clone());
        b.insert("Previous Error Information", finding_block.to_string());
        b.insert("Previous Chat History", transcript.render());
        self.messages(Stage::Tier1, &b)
    }

    pub fn render_tier2_turn(
        &self,
        seg: &Segment,
        sub: &Subtype,
        finding_block: &str,
        transcript: &DiscussionTranscript,
        lang: &LangPair,
    ) -> Result<Vec<ChatMessage>, PromptError> {
        if transcript.last_from(Speaker::Tier1).is_none() {
            return Err(PromptError::EmptyHistory);
        }
        let mut b = segment_bindings(seg, lang);
        subtype_bindings(&mut b, sub);
        b.insert("Previous Error Information", finding_block.to_string());
        b.insert("Previous Chat History", transcript.render());
        self.messages(Stage::Tier2, &b)
    }
}
