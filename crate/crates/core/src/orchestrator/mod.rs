//! The three-stage evaluation of one (segment, subtype) record and the
//! concurrent fan-out over a dataset.
//!
//! Subtype evaluation proposes findings. Self-reflection corrects the
//! translation, asks the agent whether each finding was corrected and gates
//! the record on the confidence of that answer. Records below the threshold
//! go to a discussion between the owning tier-1 agent and the subtype agent,
//! one discussion per surviving finding.

mod parse;
pub mod report;

use std::sync::Arc;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dataset, Segment};
use crate::gateway::{ChatMessage, ChatRequest, ChatResponse, Gateway, GatewayError};
use crate::prompts::{
    DemoBank, DiscussionTranscript, LangPair, PromptError, PromptSet, Speaker, Stage as PromptStage,
    DEFAULT_DEMO_COUNT,
};
use crate::typology::{Score, Severity, Subtype, Typology, TypologyError, Weight};

pub use parse::{
    assign_verdicts, parse_correction, parse_findings, parse_tier1, parse_tier2, parse_verdicts, ParsedFinding,
    Tier1Verdict, Tier2Reply, Unparseable, Verdict,
};

pub const DEFAULT_MAX_TURNS: usize = 4;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("{context}: {source}")]
    Gateway {
        context: String,
        #[source]
        source: GatewayError,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Typology(#[from] TypologyError),
    #[error("record for subtype `{0}` has not reached the final stage")]
    NonFinalRecord(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FindingStatus {
    Proposed,
    Validated,
    Dropped,
    Confirmed,
}

impl FindingStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, FindingStatus::Dropped | FindingStatus::Confirmed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    SE,
    SR,
    CD,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordStage {
    SE,
    SR,
    CD,
    Final,
}

impl RecordStage {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordStage::SE => "SE",
            RecordStage::SR => "SR",
            RecordStage::CD => "CD",
            RecordStage::Final => "Final",
        }
    }

    fn can_advance_to(self, next: RecordStage) -> bool {
        use RecordStage::*;
        matches!((self, next), (SE, SR) | (SE, Final) | (SR, CD) | (SR, Final) | (CD, Final))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorFinding {
    pub subtype: String,
    pub severity: Severity,
    pub span_text: String,
    pub explanation: String,
    pub status: FindingStatus,
    pub provenance: Provenance,
}

impl ErrorFinding {
    /// The finding written back in the format the agents use.
    pub fn block_line(&self, t: &Typology) -> String {
        let name = t.subtype(&self.subtype).map_or(self.subtype.as_str(), |s| s.name.as_str());
        let head = format!("{}-{}-‘{}’", self.severity, name, self.span_text);
        if self.explanation.is_empty() {
            head
        } else {
            format!("{head} {}", self.explanation)
        }
    }
}

pub fn findings_block<'a>(findings: impl IntoIterator<Item = &'a ErrorFinding>, t: &Typology) -> String {
    findings.into_iter().map(|f| f.block_line(t)).collect::<Vec<_>>().join("\n")
}

/// One discussion about the finding at index `finding` of its record.
#[derive(Debug, Clone, PartialEq)]
pub struct Discussion {
    pub finding: usize,
    pub transcript: DiscussionTranscript,
    pub consensus: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub system: String,
    pub seg_id: String,
    pub subtype: String,
    pub stage: RecordStage,
    pub stage_path: Vec<RecordStage>,
    pub findings: Vec<ErrorFinding>,
    pub corrected_translation: Option<String>,
    /// Set once the record has passed through self-reflection; negative
    /// infinity when the verification reply carried no log-probabilities.
    pub sr_confidence: Option<f64>,
    pub discussions: Vec<Discussion>,
    /// Fingerprints of every chat exchange, in call order.
    pub exchanges: Vec<String>,
    pub flags: Vec<String>,
    pub error: Option<String>,
}

impl EvalRecord {
    pub fn new(seg: &Segment, sub: &Subtype) -> Self {
        EvalRecord {
            system: seg.system.clone(),
            seg_id: seg.seg_id.clone(),
            subtype: sub.id.clone(),
            stage: RecordStage::SE,
            stage_path: vec![RecordStage::SE],
            findings: Vec::new(),
            corrected_translation: None,
            sr_confidence: None,
            discussions: Vec::new(),
            exchanges: Vec::new(),
            flags: Vec::new(),
            error: None,
        }
    }

    fn advance(&mut self, next: RecordStage) {
        assert!(self.stage.can_advance_to(next), "illegal transition {:?} -> {:?}", self.stage, next);
        self.stage = next;
        self.stage_path.push(next);
    }

    fn flag(&mut self, flag: impl Into<String>) {
        self.flags.push(flag.into());
    }

    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty() || self.error.is_some()
    }

    pub fn entered(&self, stage: RecordStage) -> bool {
        self.stage_path.contains(&stage)
    }

    pub fn confirmed(&self) -> impl Iterator<Item = &ErrorFinding> {
        self.findings.iter().filter(|f| f.status == FindingStatus::Confirmed)
    }

    /// Ends the record after an unrecoverable failure. Undecided findings
    /// are dropped so that nothing unverified is scored.
    fn fail(&mut self, err: &OrchestratorError) {
        self.error = Some(err.to_string());
        for f in &mut self.findings {
            if !f.status.is_terminal() {
                f.status = FindingStatus::Dropped;
            }
        }
        if self.stage != RecordStage::Final {
            self.stage = RecordStage::Final;
            self.stage_path.push(RecordStage::Final);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentResult {
    pub system: String,
    pub seg_id: String,
    pub records: Vec<EvalRecord>,
    pub score: Score,
}

impl SegmentResult {
    pub fn confirmed(&self) -> impl Iterator<Item = &ErrorFinding> {
        self.records.iter().flat_map(EvalRecord::confirmed)
    }

    pub fn findings(&self) -> impl Iterator<Item = &ErrorFinding> {
        self.records.iter().flat_map(|r| r.findings.iter())
    }
}

/// Negative sum of the weights of confirmed findings.
pub fn score_segment(records: &[EvalRecord], t: &Typology) -> Result<Score, OrchestratorError> {
    let mut weights: Vec<Weight> = Vec::new();
    for r in records {
        if r.stage != RecordStage::Final {
            return Err(OrchestratorError::NonFinalRecord(r.subtype.clone()));
        }
        for f in r.confirmed() {
            weights.push(t.weight_of(&f.subtype, f.severity)?);
        }
    }
    Ok(Score::from_penalty(weights.into_iter().sum()))
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub model: String,
    pub lang_pair: LangPair,
    /// Minimum verification confidence for skipping the discussion.
    pub threshold: f64,
    pub max_turns: usize,
    pub demo_count: usize,
    /// Subtype ids to evaluate; all subtypes when `None`.
    pub subtypes: Option<Vec<String>>,
    /// Records evaluated concurrently. The gateway separately caps requests
    /// in flight.
    pub concurrency: usize,
}

impl PipelineConfig {
    pub fn new(model: impl Into<String>, lang_pair: LangPair, threshold: f64) -> Self {
        PipelineConfig {
            model: model.into(),
            lang_pair,
            threshold,
            max_turns: DEFAULT_MAX_TURNS,
            demo_count: DEFAULT_DEMO_COUNT,
            subtypes: None,
            concurrency: 64,
        }
    }
}

pub struct Pipeline {
    gateway: Arc<Gateway>,
    typology: Arc<Typology>,
    prompts: PromptSet,
    demos: DemoBank,
    cfg: PipelineConfig,
}

impl Pipeline {
    pub fn new(
        gateway: Arc<Gateway>,
        typology: Arc<Typology>,
        prompts: PromptSet,
        demos: DemoBank,
        cfg: PipelineConfig,
    ) -> Result<Self, OrchestratorError> {
        if cfg.threshold.is_nan() {
            return Err(OrchestratorError::Config("threshold is NaN".into()));
        }
        if cfg.max_turns == 0 {
            return Err(OrchestratorError::Config("max_turns must be at least 1".into()));
        }
        if let Some(ids) = &cfg.subtypes {
            for id in ids {
                if typology.subtype(id).is_none() {
                    return Err(TypologyError::UnknownSubtype(id.clone()).into());
                }
            }
        }
        Ok(Pipeline { gateway, typology, prompts, demos, cfg })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    /// Same gateway, prompts and settings with a different gate.
    pub fn with_threshold(&self, threshold: f64) -> Result<Pipeline, OrchestratorError> {
        Pipeline::new(
            self.gateway.clone(),
            self.typology.clone(),
            self.prompts.clone(),
            self.demos.clone(),
            PipelineConfig { threshold, ..self.cfg.clone() },
        )
    }

    /// Same pipeline restricted to the given subtype ids.
    pub fn with_subtypes(&self, subtypes: Option<Vec<String>>) -> Result<Pipeline, OrchestratorError> {
        Pipeline::new(
            self.gateway.clone(),
            self.typology.clone(),
            self.prompts.clone(),
            self.demos.clone(),
            PipelineConfig { subtypes, ..self.cfg.clone() },
        )
    }

    pub fn typology(&self) -> &Typology {
        &self.typology
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    /// Subtypes evaluated per segment, in typology order.
    pub fn subtypes(&self) -> Vec<&Subtype> {
        self.typology
            .subtypes
            .iter()
            .filter(|s| self.cfg.subtypes.as_ref().is_none_or(|ids| ids.contains(&s.id)))
            .collect()
    }

    async fn call(
        &self,
        rec: &mut EvalRecord,
        messages: Vec<ChatMessage>,
        logprobs: bool,
        what: &str,
    ) -> Result<ChatResponse, OrchestratorError> {
        let mut req = ChatRequest::new(self.cfg.model.clone(), messages);
        if logprobs {
            req = req.with_logprobs();
        }
        match self.gateway.complete(&req).await {
            Ok(exchange) => {
                rec.exchanges.push(exchange.fingerprint);
                Ok(exchange.response)
            }
            Err(source) => Err(OrchestratorError::Gateway {
                context: format!("{}/{}/{} {what}", rec.system, rec.seg_id, rec.subtype),
                source,
            }),
        }
    }

    /// Sends `messages`; if the reply does not parse, asks once more with a
    /// format reminder appended to the conversation.
    async fn call_parsed<T>(
        &self,
        rec: &mut EvalRecord,
        messages: Vec<ChatMessage>,
        logprobs: bool,
        stage: PromptStage,
        sub: &Subtype,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<(ChatResponse, Option<T>), OrchestratorError> {
        let what = format!("{stage:?}");
        let first = self.call(rec, messages.clone(), logprobs, &what).await?;
        if let Some(v) = parse(&first.text) {
            return Ok((first, Some(v)));
        }
        tracing::debug!(record = %rec.subtype, ?stage, "reply does not follow the format, retrying once");
        let mut retry = messages;
        retry.push(ChatMessage::assistant(first.text));
        retry.push(self.prompts.reminder(stage, sub)?);
        let second = self.call(rec, retry, logprobs, &what).await?;
        let parsed = parse(&second.text);
        Ok((second, parsed))
    }

    pub async fn stage_subtype_evaluation(
        &self,
        rec: &mut EvalRecord,
        seg: &Segment,
        sub: &Subtype,
    ) -> Result<(), OrchestratorError> {
        let demos = self.demos.select(&sub.id, &self.cfg.lang_pair, self.cfg.demo_count);
        let messages = self.prompts.render_subtype_eval(
            seg,
            sub,
            &self.typology.severity_definition,
            &demos,
            &self.cfg.lang_pair,
        )?;
        let typology = &*self.typology;
        let (_, parsed) = self
            .call_parsed(rec, messages, false, PromptStage::SubtypeEval, sub, |t| parse_findings(t, typology).ok())
            .await?;
        match parsed {
            None => rec.flag("se_unparseable"),
            Some(found) => {
                for p in found {
                    if p.subtype.as_deref() != Some(sub.id.as_str()) {
                        rec.flag(format!("se_label_attributed:{}", p.label));
                    }
                    rec.findings.push(ErrorFinding {
                        subtype: sub.id.clone(),
                        severity: p.severity,
                        span_text: p.span,
                        explanation: p.explanation,
                        status: FindingStatus::Proposed,
                        provenance: Provenance::SE,
                    });
                }
            }
        }
        rec.advance(if rec.findings.is_empty() { RecordStage::Final } else { RecordStage::SR });
        Ok(())
    }

    pub async fn stage_self_reflection(
        &self,
        rec: &mut EvalRecord,
        seg: &Segment,
        sub: &Subtype,
    ) -> Result<(), OrchestratorError> {
        assert_eq!(rec.stage, RecordStage::SR);
        let block = findings_block(&rec.findings, &self.typology);
        let messages = self.prompts.render_correction(seg, sub, &block, &self.cfg.lang_pair)?;
        let (_, corrected) =
            self.call_parsed(rec, messages, false, PromptStage::Correction, sub, parse_correction).await?;

        let confidence = match corrected {
            None => {
                rec.flag("sr_correction_unparseable");
                self.mark_all(rec, FindingStatus::Validated);
                f64::NEG_INFINITY
            }
            Some(corrected) => {
                let messages = self.prompts.render_verification(&seg.translation, &corrected, &block)?;
                rec.corrected_translation = Some(corrected);
                let n = rec.findings.len();
                let (resp, verdicts) = self
                    .call_parsed(rec, messages, true, PromptStage::Verification, sub, |t| {
                        assign_verdicts(&parse_verdicts(t), n)
                    })
                    .await?;
                match verdicts {
                    None => {
                        rec.flag("sr_verdict_unparseable");
                        self.mark_all(rec, FindingStatus::Validated);
                    }
                    Some(vs) => {
                        for (f, v) in rec.findings.iter_mut().zip(vs) {
                            f.status = match v {
                                Verdict::Corrected => FindingStatus::Validated,
                                Verdict::NoDifference => FindingStatus::Dropped,
                            };
                            f.provenance = Provenance::SR;
                        }
                    }
                }
                match resp.confidence() {
                    Ok(c) => c,
                    Err(_) => {
                        rec.flag("missing_logprobs");
                        f64::NEG_INFINITY
                    }
                }
            }
        };
        rec.sr_confidence = Some(confidence);

        if rec.findings.iter().all(|f| f.status == FindingStatus::Dropped) {
            rec.advance(RecordStage::Final);
        } else if confidence >= self.cfg.threshold {
            for f in rec.findings.iter_mut().filter(|f| f.status == FindingStatus::Validated) {
                f.status = FindingStatus::Confirmed;
            }
            rec.advance(RecordStage::Final);
        } else {
            rec.advance(RecordStage::CD);
        }
        Ok(())
    }

    fn mark_all(&self, rec: &mut EvalRecord, status: FindingStatus) {
        for f in &mut rec.findings {
            f.status = status;
            f.provenance = Provenance::SR;
        }
    }

    pub async fn stage_collaborative_discussion(
        &self,
        rec: &mut EvalRecord,
        seg: &Segment,
        sub: &Subtype,
    ) -> Result<(), OrchestratorError> {
        assert_eq!(rec.stage, RecordStage::CD);
        let pending: Vec<usize> = rec
            .findings
            .iter()
            .enumerate()
            .filter(|(_, f)| f.status == FindingStatus::Validated)
            .map(|(i, _)| i)
            .collect();
        for idx in pending {
            self.discuss(rec, seg, sub, idx).await?;
        }
        rec.advance(RecordStage::Final);
        Ok(())
    }

    async fn discuss(
        &self,
        rec: &mut EvalRecord,
        seg: &Segment,
        sub: &Subtype,
        idx: usize,
    ) -> Result<(), OrchestratorError> {
        let core = self.typology.core_of(sub);
        let block = rec.findings[idx].block_line(&self.typology);
        let lang = &self.cfg.lang_pair;
        let mut transcript = DiscussionTranscript::new();
        let mut verdict: Option<Tier1Verdict> = None;
        let mut consensus = false;

        while transcript.len() < self.cfg.max_turns {
            let messages = self.prompts.render_tier1_turn(seg, core, sub, &block, &transcript, lang)?;
            let (resp, parsed) =
                self.call_parsed(rec, messages, false, PromptStage::Tier1, sub, parse_tier1).await?;
            match parsed {
                Some(v) => verdict = Some(v),
                None => rec.flag(format!("cd_tier1_unparseable:{idx}")),
            }
            transcript.push(Speaker::Tier1, resp.text)?;
            if transcript.len() >= self.cfg.max_turns {
                break;
            }

            let messages = self.prompts.render_tier2_turn(seg, sub, &block, &transcript, lang)?;
            let (resp, reply) =
                self.call_parsed(rec, messages, false, PromptStage::Tier2, sub, parse_tier2).await?;
            transcript.push(Speaker::Tier2, resp.text)?;
            match reply {
                Some(Tier2Reply::Agree) => {
                    consensus = true;
                    break;
                }
                Some(Tier2Reply::Disagree) => {}
                None => rec.flag(format!("cd_tier2_unparseable:{idx}")),
            }
        }

        let finding = &mut rec.findings[idx];
        finding.provenance = Provenance::CD;
        match verdict {
            Some(Tier1Verdict { exists: false, .. }) => finding.status = FindingStatus::Dropped,
            Some(Tier1Verdict { exists: true, severity }) => {
                finding.status = FindingStatus::Confirmed;
                if let Some(s) = severity {
                    finding.severity = s;
                }
            }
            None => {
                finding.status = FindingStatus::Confirmed;
                rec.flags.push(format!("cd_no_verdict:{idx}"));
            }
        }
        rec.discussions.push(Discussion { finding: idx, transcript, consensus });
        Ok(())
    }

    async fn run_record(&self, rec: &mut EvalRecord, seg: &Segment, sub: &Subtype) -> Result<(), OrchestratorError> {
        self.stage_subtype_evaluation(rec, seg, sub).await?;
        if rec.stage == RecordStage::SR {
            self.stage_self_reflection(rec, seg, sub).await?;
        }
        if rec.stage == RecordStage::CD {
            self.stage_collaborative_discussion(rec, seg, sub).await?;
        }
        Ok(())
    }

    /// Runs every stage for one record. Failures are recorded on the
    /// returned record rather than propagated.
    pub async fn evaluate_record(&self, seg: &Segment, sub: &Subtype) -> EvalRecord {
        let mut rec = EvalRecord::new(seg, sub);
        if let Err(e) = self.run_record(&mut rec, seg, sub).await {
            tracing::warn!(system = %seg.system, seg_id = %seg.seg_id, subtype = %sub.id, error = %e, "record failed");
            rec.fail(&e);
        }
        rec
    }

    /// Evaluates all (segment, subtype) records concurrently. Results are in
    /// dataset order, records within a segment in typology order.
    pub async fn evaluate_dataset(&self, dataset: &Dataset) -> Result<Vec<SegmentResult>, OrchestratorError> {
        let subs = self.subtypes();
        let jobs: Vec<(usize, usize, &Segment, &Subtype)> = dataset
            .segments
            .iter()
            .enumerate()
            .flat_map(|(si, seg)| subs.iter().enumerate().map(move |(ti, sub)| (si, ti, seg, *sub)))
            .collect();
        let total = jobs.len();
        let mut done: Vec<(usize, usize, EvalRecord)> = stream::iter(jobs)
            .map(|(si, ti, seg, sub)| async move { (si, ti, self.evaluate_record(seg, sub).await) })
            .buffer_unordered(self.cfg.concurrency.max(1))
            .collect()
            .await;
        done.sort_by_key(|(si, ti, _)| (*si, *ti));
        tracing::info!(records = total, "evaluation finished");

        let mut results: Vec<SegmentResult> = Vec::with_capacity(dataset.segments.len());
        let mut iter = done.into_iter().peekable();
        for (si, seg) in dataset.segments.iter().enumerate() {
            let mut records = Vec::with_capacity(subs.len());
            while let Some((_, _, rec)) = iter.next_if(|(s, _, _)| *s == si) {
                records.push(rec);
            }
            let score = score_segment(&records, &self.typology)?;
            results.push(SegmentResult { system: seg.system.clone(), seg_id: seg.seg_id.clone(), records, score });
        }
        Ok(results)
    }
}
