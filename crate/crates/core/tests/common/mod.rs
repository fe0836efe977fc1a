#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use mqmeval::gateway::{ChatBackend, Gateway, MockBackend, MockTranscript};
use mqmeval::orchestrator::{Pipeline, PipelineConfig};
use mqmeval::prompts::{DemoBank, LangPair, PromptSet};
use mqmeval::{Dataset, Typology};

/// Verification confidence gate used by the case fixtures.
pub const CASE_THRESHOLD: f64 = -0.5;

pub fn cases_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/cases")
}

pub fn case_dataset(lang: &str) -> Dataset {
    let dir = cases_dir();
    Dataset::load(
        &dir.join(format!("{lang}.segments.tsv")),
        Some(&dir.join(format!("{lang}.annotations.tsv"))),
    )
    .expect("case dataset loads")
}

pub fn case_backend(lang: &str) -> Arc<MockBackend> {
    let transcript = MockTranscript::load(&cases_dir().join(format!("{lang}.mock.json"))).expect("mock loads");
    Arc::new(MockBackend::new(transcript))
}

pub fn pipeline_with(gateway: Gateway, lang: &str, threshold: f64) -> Pipeline {
    let cfg = PipelineConfig::new("gpt-4o-mini", LangPair::parse(lang).unwrap(), threshold);
    Pipeline::new(
        Arc::new(gateway),
        Arc::new(Typology::default_mqm()),
        PromptSet::default_set(),
        DemoBank::default_bank(),
        cfg,
    )
    .expect("pipeline config is valid")
}

pub fn case_pipeline(lang: &str, threshold: f64) -> Pipeline {
    let backend: Arc<dyn ChatBackend> = case_backend(lang);
    pipeline_with(Gateway::new(backend), lang, threshold)
}

pub mod random {
    use std::hash::{DefaultHasher, Hash, Hasher};
    use std::sync::Arc;

    use async_trait::async_trait;
    use mqmeval::gateway::{
        BackendKind, BackendReply, ChatBackend, ChatRequest, ChatResponse, Gateway, GatewayError, RetryPolicy,
        TokenLogprob,
    };
    use mqmeval::orchestrator::report::{run_counts, RunCounts};
    use mqmeval::orchestrator::{FindingStatus, Pipeline, Provenance, RecordStage, SegmentResult};
    use mqmeval::{Dataset, Severity, Typology};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    const LABELS: [&str; 6] = ["Mistranslation", "Awkward", "Omission", "Punctuation", "Grammar", "Tone"];
    const WORDS: [&str; 5] = ["the cat", "sat", "on the mat", "quickly", "mat"];

    /// Answers each stage with random but well-typed (and sometimes
    /// malformed) replies. The reply depends only on the seed and the
    /// request, so concurrent runs and reruns agree.
    pub struct RandomBackend {
        pub seed: u64,
        /// Probability of a gateway error per request.
        pub failure_rate: f64,
    }

    fn severity(rng: &mut StdRng) -> &'static str {
        ["Major", "Minor", "Neutral"][rng.random_range(0..3)]
    }

    impl RandomBackend {
        fn reply(&self, req: &ChatRequest, rng: &mut StdRng) -> ChatResponse {
            let prompt = &req.messages[1].content;
            let all = req.prompt_text();
            let own = prompt
                .lines()
                .find_map(|l| l.strip_prefix("Error type: "))
                .or_else(|| prompt.lines().find_map(|l| l.strip_prefix("Error type under review: ")))
                .map(|s| s.trim_end_matches(|c: char| c != '.' && !c.is_alphabetic()).split('.').next().unwrap_or("").to_string())
                .unwrap_or_else(|| "Awkward".into());
            let mut logprobs = None;
            let text = if all.contains("determine whether the following translation") {
                if rng.random_bool(0.08) {
                    "I am not sure what to say.".to_string()
                } else {
                    let k = rng.random_range(0..=3);
                    if k == 0 {
                        "No error found.".to_string()
                    } else {
                        (0..k)
                            .map(|_| {
                                let label = if rng.random_bool(0.7) { own.as_str() } else { LABELS[rng.random_range(0..LABELS.len())] };
                                format!("{}-{}-‘{}’ reason.", severity(rng), label, WORDS[rng.random_range(0..WORDS.len())])
                            })
                            .collect::<Vec<_>>()
                            .join("\n")
                    }
                }
            } else if all.contains("You need to correct the errors in the translation.") {
                if rng.random_bool(0.08) { "   ".to_string() } else { "The cat sat on the mat.".to_string() }
            } else if all.contains("compare the following original translation") {
                let n = rng.random_range(0..=3);
                let text = if n == 0 {
                    "Unclear.".to_string()
                } else {
                    (0..n)
                        .map(|_| {
                            if rng.random_bool(0.5) {
                                "Error has been corrected."
                            } else {
                                "No significant difference between the original translation and the corrected translation."
                            }
                        })
                        .collect::<Vec<_>>()
                        .join("\n")
                };
                if !rng.random_bool(0.08) {
                    let toks = rng.random_range(1..=4);
                    logprobs = Some(
                        (0..toks)
                            .map(|i| TokenLogprob {
                                token: if i == 0 { text.clone() } else { String::new() },
                                logprob: -rng.random_range(0.0..1.5),
                            })
                            .collect(),
                    );
                }
                text
            } else if all.contains("responsible for a high-level error type") {
                if rng.random_bool(0.1) {
                    "Let me think.".to_string()
                } else {
                    let exists = if rng.random_bool(0.5) { "Yes" } else { "No" };
                    if rng.random_bool(0.2) {
                        format!("Error Exist: {exists}  The assessment stands.")
                    } else {
                        format!("Error Exist: {exists}  Error Severity: {}.  The assessment stands.", severity(rng))
                    }
                }
            } else if all.contains("communicated with the expert") {
                match rng.random_range(0..10) {
                    0 => "Hmm.".to_string(),
                    1..=5 => "I agree with him.".to_string(),
                    _ => "I disagree, the error is real.".to_string(),
                }
            } else {
                panic!("unrecognized prompt: {prompt}");
            };
            ChatResponse { text, token_logprobs: logprobs, backend: BackendKind::Mock }
        }
    }

    #[async_trait]
    impl ChatBackend for RandomBackend {
        fn kind(&self) -> BackendKind {
            BackendKind::Mock
        }

        async fn send(&self, req: &ChatRequest, fingerprint: &str) -> Result<BackendReply, GatewayError> {
            let mut h = DefaultHasher::new();
            (self.seed, fingerprint).hash(&mut h);
            let mut rng = StdRng::seed_from_u64(h.finish());
            if rng.random_bool(self.failure_rate) {
                return Err(GatewayError::Transport("random failure".into()));
            }
            Ok(BackendReply { response: self.reply(req, &mut rng), raw: None })
        }
    }

    pub fn random_gateway(seed: u64, failure_rate: f64) -> Gateway {
        Gateway::new(Arc::new(RandomBackend { seed, failure_rate })).with_retry(RetryPolicy::none())
    }

    pub fn one_segment() -> Dataset {
        Dataset::from_tsv(
            "random",
            "system\tdomain\tdoc_id\tseg_id\tsource\ttarget\treference\nsys\tnews\td\ts1\tDie Katze saß auf der Matte.\tThe cat sat on the mat.\t\n",
            None,
        )
        .unwrap()
    }

    /// Subtype ids drawn for one run.
    pub fn random_subtypes(t: &Typology, seed: u64) -> Vec<String> {
        let mut rng = StdRng::seed_from_u64(seed ^ 0x5eed);
        let k = rng.random_range(1..=4);
        let mut ids: Vec<String> = Vec::new();
        while ids.len() < k {
            let s = &t.subtypes[rng.random_range(0..t.subtypes.len())];
            if !ids.contains(&s.id) {
                ids.push(s.id.clone());
            }
        }
        ids
    }

    /// Expected penalty in tenths, from the published weight table.
    fn tenths(subtype: &str, sev: Severity) -> i64 {
        match (sev, subtype) {
            (Severity::Major, _) => 50,
            (Severity::Minor, "punctuation") => 1,
            (Severity::Minor, _) => 10,
            (Severity::Neutral, _) => 0,
        }
    }

    /// Violations of the per-run invariants, empty when all hold.
    pub fn check_run(results: &[SegmentResult], threshold: f64) -> Vec<String> {
        let mut bad = Vec::new();
        for r in results {
            let mut penalty = 0;
            for rec in &r.records {
                let tag = format!("{}/{}", r.seg_id, rec.subtype);
                if rec.stage != RecordStage::Final || rec.stage_path.last() != Some(&RecordStage::Final) {
                    bad.push(format!("{tag}: not final"));
                }
                for f in &rec.findings {
                    if !matches!(f.status, FindingStatus::Confirmed | FindingStatus::Dropped) {
                        bad.push(format!("{tag}: finding left {:?}", f.status));
                    }
                    if f.status == FindingStatus::Confirmed {
                        penalty += tenths(&f.subtype, f.severity);
                    }
                }
                if threshold == f64::NEG_INFINITY && rec.entered(RecordStage::CD) {
                    bad.push(format!("{tag}: entered discussion at -inf"));
                }
                let survived = rec.entered(RecordStage::SR)
                    && rec.findings.iter().any(|f| !(f.status == FindingStatus::Dropped && f.provenance == Provenance::SR));
                if threshold == f64::INFINITY && rec.error.is_none() && survived && !rec.entered(RecordStage::CD) {
                    bad.push(format!("{tag}: survived self-reflection but skipped discussion at +inf"));
                }
            }
            if r.score.to_f64() != -(penalty as f64) / 10.0 {
                bad.push(format!("{}: score {} but confirmed weights give {}", r.seg_id, r.score.to_f64(), -(penalty as f64) / 10.0));
            }
        }
        bad
    }

    /// One randomized run: the violations found and the run's counts.
    pub async fn random_run(seed: u64, threshold: f64, failure_rate: f64) -> (Vec<String>, RunCounts) {
        let t = Typology::default_mqm();
        let subs = random_subtypes(&t, seed);
        let mut p = super::pipeline_with(random_gateway(seed, failure_rate), "de-en", threshold);
        p = with_subtypes(p, subs);
        let results = p.evaluate_dataset(&one_segment()).await.expect("dataset evaluates");
        (check_run(&results, threshold), run_counts(&results))
    }

    fn with_subtypes(p: Pipeline, subs: Vec<String>) -> Pipeline {
        p.with_subtypes(Some(subs)).expect("known subtypes")
    }

    /// Threshold for run `i`: alternates between the two extremes and a
    /// random finite value.
    pub fn threshold_for(i: u64) -> f64 {
        match i % 3 {
            0 => f64::NEG_INFINITY,
            1 => f64::INFINITY,
            _ => -StdRng::seed_from_u64(i).random_range(0.0..3.0),
        }
    }
}
