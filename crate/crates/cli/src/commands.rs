use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde_json::json;

use mqmeval::calibration::{calibrate_threshold, CalibrationConfig, ThresholdEntry, ThresholdStore};
use mqmeval::gateway::{
    ChatBackend, DiskCache, Gateway, HttpBackend, HttpConfig, MockBackend, MockTranscript, RetryPolicy, TokenBucket,
};
use mqmeval::metrics::{meta_evaluate, meta_score, round_half_up, segment_agreement, ScoreSeries};
use mqmeval::orchestrator::report::{real_json, report_jsonl, run_counts, summary_json};
use mqmeval::orchestrator::{Pipeline, PipelineConfig};
use mqmeval::prompts::{DemoBank, LangPair, PromptSet};
use mqmeval::spanmatch::{
    is_unspaced_lang, sweep, sweep_csv, CharTokenizer, DefaultTokenizer, LexiconTokenizer, SpanSet, Tokenizer,
};
use mqmeval::{load_typology, Dataset, Typology};

use crate::config::{Backend, RunConfig, TokenizerChoice};
use crate::output::{read_report, report_scores, report_spans, write_with_meta, RunMeta};

pub struct Ctx {
    pub cfg: RunConfig,
    pub typology: Arc<Typology>,
}

impl Ctx {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let typology = match &cfg.typology {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
                load_typology(&text).with_context(|| format!("typology {}", path.display()))?
            }
            None => Typology::default_mqm(),
        };
        Ok(Ctx { cfg, typology: Arc::new(typology) })
    }

    fn meta(&self, command: &str) -> RunMeta {
        RunMeta::new(command, self.cfg.digest(), self.typology.digest())
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn gateway(&self) -> Result<Gateway> {
        let cfg = &self.cfg;
        let backend: Arc<dyn ChatBackend> = match cfg.backend()? {
            Backend::Live { endpoint } => Arc::new(HttpBackend::new(&HttpConfig {
                endpoint: endpoint.to_string(),
                api_key_env: cfg.api_key_env.clone(),
                timeout: Duration::from_secs(cfg.timeout_secs),
            })?),
            Backend::Mock { transcript } => Arc::new(MockBackend::new(MockTranscript::load(transcript)?)),
        };
        let mut g = Gateway::new(backend).with_max_inflight(cfg.max_inflight);
        if let Some(dir) = &cfg.cache_dir {
            g = g.with_cache(DiskCache::open(dir)?);
        }
        if let Some(rate) = cfg.requests_per_second {
            g = g.with_rate_limit(TokenBucket::new(rate, cfg.max_inflight as u32));
        }
        if let Some(n) = cfg.max_retries {
            g = g.with_retry(RetryPolicy { max_retries: n, ..RetryPolicy::default() });
        }
        Ok(g)
    }

    fn pipeline(&self, threshold: f64) -> Result<Pipeline> {
        let cfg = &self.cfg;
        let prompts = match &cfg.prompts {
            Some(p) => PromptSet::load(p)?,
            None => PromptSet::default_set(),
        };
        let demos = match &cfg.demos {
            Some(p) => DemoBank::load(p)?,
            None => DemoBank::default_bank(),
        };
        let mut pc = PipelineConfig::new(cfg.model()?, LangPair::parse(cfg.lang_pair()?)?, threshold);
        pc.subtypes = cfg.subtypes.clone();
        pc.concurrency = cfg.concurrency;
        Ok(Pipeline::new(Arc::new(self.gateway()?), self.typology.clone(), prompts, demos, pc)?)
    }

    fn dataset(&self, segments: Option<&Path>, annotations: Option<&Path>, what: &str) -> Result<Dataset> {
        let segments = segments.with_context(|| format!("no {what} segments file configured"))?;
        let d = Dataset::load(segments, annotations)?;
        for w in &d.warnings {
            tracing::warn!("{w}");
        }
        Ok(d)
    }
}

pub async fn calibrate(
    ctx: &Ctx,
    validation: Option<PathBuf>,
    annotations: Option<PathBuf>,
    percentile: Option<f64>,
) -> Result<()> {
    let cfg = &ctx.cfg;
    let seg_path = validation.or_else(|| cfg.validation_segments.clone());
    let ann_path = annotations.or_else(|| cfg.validation_annotations.clone());
    let data = ctx.dataset(seg_path.as_deref(), ann_path.as_deref(), "validation")?;
    let cal_cfg = CalibrationConfig::new(percentile.unwrap_or(cfg.percentile))?;
    let pipeline = ctx.pipeline(f64::NEG_INFINITY)?;
    let cal = calibrate_threshold(&data, &pipeline, &cal_cfg).await?;

    let (model, lang) = (cfg.model()?, cfg.lang_pair()?);
    let store_path = cfg.store_path();
    let mut store = ThresholdStore::load(&store_path)?;
    store.upsert(ThresholdEntry::from_calibration(model, lang, &cal));
    let mut text = serde_json::to_string_pretty(&store)?;
    text.push('\n');
    let mut meta = ctx.meta("calibrate");
    meta.input(seg_path.as_deref().expect("dataset loaded"))?;
    meta.note("excluded_non_finite", cal.excluded);
    meta.note("failed_records", cal.failed_records);
    write_with_meta(&store_path, &text, &meta)?;
    println!(
        "pool size {} ({} excluded), percentile {}, threshold {} for {model} {lang}",
        cal.pool.len(),
        cal.excluded,
        cal.percentile,
        cal.threshold
    );
    println!("threshold store: {}", store_path.display());
    Ok(())
}

fn resolve_threshold(cfg: &RunConfig, flag: Option<f64>) -> Result<(f64, String)> {
    if let Some(t) = flag {
        return Ok((t, "command line".into()));
    }
    if let Some(t) = cfg.threshold {
        return Ok((t, "config".into()));
    }
    let path = cfg.store_path();
    let store = ThresholdStore::load(&path)?;
    let (model, lang) = (cfg.model()?, cfg.lang_pair()?);
    match store.get(model, lang) {
        Some(e) => Ok((e.threshold, format!("store {}", path.display()))),
        None => bail!(
            "no threshold for {model} {lang}: set `threshold`, pass --threshold, or run `calibrate` (store {})",
            path.display()
        ),
    }
}

/// Returns the number of flagged records.
pub async fn evaluate(ctx: &Ctx, segments: Option<PathBuf>, threshold: Option<f64>) -> Result<usize> {
    let cfg = &ctx.cfg;
    let (threshold, source) = resolve_threshold(cfg, threshold)?;
    let seg_path = segments.or_else(|| cfg.segments.clone());
    let data = ctx.dataset(seg_path.as_deref(), None, "evaluation")?;
    let pipeline = ctx.pipeline(threshold)?;
    let results = pipeline.evaluate_dataset(&data).await?;

    let mut meta = ctx.meta("evaluate");
    meta.input(seg_path.as_deref().expect("dataset loaded"))?;
    meta.note("threshold", real_json(threshold));
    meta.note("threshold_source", &source);
    let report_path = ctx.out("report.jsonl");
    write_with_meta(&report_path, &report_jsonl(&results), &meta)?;

    let mut summary = summary_json(&results, cfg.model()?, cfg.lang_pair()?, threshold, ctx.typology.digest());
    summary["threshold_source"] = json!(source);
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    write_with_meta(&ctx.out("summary.json"), &text, &meta)?;

    let c = run_counts(&results);
    let stats = pipeline.gateway().stats();
    println!(
        "{} segments, {} records: {} discussed, {} confirmed findings, {} flagged, {} failed",
        c.segments, c.records, c.discussed_records, c.confirmed_findings, c.flagged_records, c.failed_records
    );
    println!("{} cache hits, {} backend calls", stats.cache_hits, stats.backend_calls);
    println!("report: {}", report_path.display());
    Ok(c.flagged_records)
}

pub fn score(ctx: &Ctx, report: Option<PathBuf>, gold: bool, output: Option<PathBuf>) -> Result<()> {
    let mut meta = ctx.meta("score");
    let (series, default_name) = if gold {
        let cfg = &ctx.cfg;
        let data = ctx.dataset(cfg.segments.as_deref(), cfg.annotations.as_deref(), "gold")?;
        meta.input(cfg.segments.as_deref().expect("dataset loaded"))?;
        if let Some(a) = &cfg.annotations {
            meta.input(a)?;
        }
        let scores = data.gold_scores(&ctx.typology)?;
        (ScoreSeries::new(scores.into_iter().map(|(k, s)| (k, s.to_f64())))?, "gold_scores.tsv")
    } else {
        let path = report.unwrap_or_else(|| ctx.out("report.jsonl"));
        meta.input(&path)?;
        (report_scores(&read_report(&path)?)?, "scores.tsv")
    };
    let out = output.unwrap_or_else(|| ctx.out(default_name));
    write_with_meta(&out, &series.to_tsv(), &meta)?;
    println!("{} scores written to {}", series.len(), out.display());
    Ok(())
}

fn load_spans(path: &Path) -> Result<SpanSet> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        Ok(report_spans(&read_report(path)?))
    } else {
        Ok(SpanSet::load(path)?)
    }
}

fn tokenizer(cfg: &RunConfig) -> Box<dyn Tokenizer> {
    match cfg.tokenizer {
        TokenizerChoice::Words => Box::new(DefaultTokenizer),
        TokenizerChoice::Chars => Box::new(CharTokenizer),
        TokenizerChoice::Lexicon => Box::new(LexiconTokenizer::new(&cfg.lexicon)),
        TokenizerChoice::Auto => {
            let target = cfg.lang_pair.as_deref().and_then(|p| LangPair::parse(p).ok()).map(|p| p.target);
            if target.is_some_and(|t| is_unspaced_lang(&t)) {
                Box::new(CharTokenizer)
            } else {
                Box::new(DefaultTokenizer)
            }
        }
    }
}

pub fn spanmatch(ctx: &Ctx, detected: &Path, gold: &Path, thetas: Option<Vec<f64>>) -> Result<()> {
    let thetas = thetas.unwrap_or_else(|| ctx.cfg.thetas.clone());
    let d = load_spans(detected)?;
    let g = load_spans(gold)?;
    let rows = sweep(&d, &g, &thetas, tokenizer(&ctx.cfg).as_ref())?;
    let mut meta = ctx.meta("spanmatch");
    meta.input(detected)?;
    meta.input(gold)?;
    meta.note("tokenizer", ctx.cfg.tokenizer);
    meta.note("averaging", "micro");
    meta.note("assignment", "greedy by descending shared run length");
    let out = ctx.out("spanmatch.csv");
    let csv = sweep_csv(&rows);
    write_with_meta(&out, &csv, &meta)?;
    print!("{csv}");
    println!("{} detected, {} gold spans; written to {}", d.len(), g.len(), out.display());
    Ok(())
}

fn load_scores(path: &Path) -> Result<ScoreSeries> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        report_scores(&read_report(path)?)
    } else {
        Ok(ScoreSeries::load(path)?)
    }
}

pub fn metaeval(
    ctx: &Ctx,
    metric: Option<&Path>,
    gold: Option<&Path>,
    components: Option<Vec<f64>>,
    epsilon: Option<f64>,
    name: &str,
) -> Result<()> {
    let mut meta = ctx.meta("metaeval");
    if let Some(c) = components {
        let m = meta_score(&c)?;
        let report = json!({
            "sys_pairwise_acc": c[0], "sys_pearson": c[1], "seg_accuracy_t": c[2], "seg_pearson": c[3], "meta": m,
        });
        let csv = format!(
            "metric,meta,sys_pairwise_acc,sys_pearson,seg_accuracy_t,seg_pearson\n{name},{m:.6},{:.6},{:.6},{:.6},{:.6}\n",
            c[0], c[1], c[2], c[3]
        );
        write_with_meta(&ctx.out("meta.json"), &(serde_json::to_string_pretty(&report)? + "\n"), &meta)?;
        write_with_meta(&ctx.out("meta.csv"), &csv, &meta)?;
        println!("meta {} ({m})", round_half_up(m, 3));
        return Ok(());
    }
    let (Some(metric), Some(gold)) = (metric, gold) else {
        bail!("metaeval needs --metric and --gold, or --components");
    };
    let m = load_scores(metric)?;
    let g = load_scores(gold)?;
    meta.input(metric)?;
    meta.input(gold)?;
    let report = meta_evaluate(&m, &g, epsilon.or(ctx.cfg.epsilon)).context("meta-evaluation failed")?;
    let agreement = match segment_agreement(&m, &g, ctx.cfg.normalize) {
        Ok(a) => serde_json::to_value(a)?,
        Err(e) => json!({ "error": e.to_string() }),
    };
    meta.note("normalization", if ctx.cfg.normalize { "min-max" } else { "none" });
    let mut body = serde_json::to_value(&report)?;
    body["segment_agreement"] = agreement;
    write_with_meta(&ctx.out("meta.json"), &(serde_json::to_string_pretty(&body)? + "\n"), &meta)?;
    write_with_meta(&ctx.out("meta.csv"), &report.to_csv(name), &meta)?;
    let r3 = |x: f64| round_half_up(x, 3);
    println!(
        "meta {}: sys acc {}, sys pearson {}, seg acc-t {} (eps {}), seg pearson {}",
        r3(report.meta),
        r3(report.sys_pairwise_acc),
        r3(report.sys_pearson),
        r3(report.seg_accuracy_t),
        report.epsilon,
        r3(report.seg_pearson)
    );
    Ok(())
}

pub fn report(ctx: &Ctx, report: Option<PathBuf>) -> Result<()> {
    let path = report.unwrap_or_else(|| ctx.out("report.jsonl"));
    let lines = read_report(&path)?;
    let mut meta = ctx.meta("report");
    meta.input(&path)?;

    let mut systems: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    let mut errors: BTreeMap<(&str, &str, &str, &str), usize> = BTreeMap::new();
    for l in &lines {
        let e = systems.entry(&l.system).or_default();
        e.0 += 1;
        e.1 += l.score;
        for f in &l.findings {
            *errors.entry((&f.subtype, &f.severity, &f.status, &f.provenance)).or_default() += 1;
        }
    }
    let mut sys_csv = String::from("system,segments,total_score,mean_score\n");
    for (s, (n, total)) in &systems {
        let _ = writeln!(sys_csv, "{s},{n},{total:.6},{:.6}", total / *n as f64);
    }
    let mut err_csv = String::from("subtype,severity,status,provenance,count\n");
    for ((sub, sev, status, prov), n) in &errors {
        let _ = writeln!(err_csv, "{sub},{sev},{status},{prov},{n}");
    }
    write_with_meta(&ctx.out("systems.csv"), &sys_csv, &meta)?;
    write_with_meta(&ctx.out("errors.csv"), &err_csv, &meta)?;
    write_with_meta(&ctx.out("spans.tsv"), &report_spans(&lines).to_tsv(), &meta)?;
    print!("{sys_csv}");
    println!("wrote systems.csv, errors.csv and spans.tsv to {}", ctx.cfg.out_dir.display());
    Ok(())
}
