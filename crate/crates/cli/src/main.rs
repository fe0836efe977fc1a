//! `mqmeval`: calibrate, evaluate, score, match spans and meta-evaluate.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use config::{Overrides, RunConfig};

/// Exit status of `evaluate` when any record was flagged or failed.
const EXIT_FLAGGED: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "mqmeval", version, about = "Multi-agent MQM evaluation of machine translation")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Response cache directory.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Replay a mock transcript instead of calling an endpoint.
    #[arg(long, global = true)]
    mock: Option<PathBuf>,
    /// Maximum concurrent backend requests.
    #[arg(long, global = true)]
    max_inflight: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Derive the gate threshold from a validation set and store it.
    Calibrate {
        /// Validation segments TSV.
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long)]
        validation_annotations: Option<PathBuf>,
        #[arg(long)]
        percentile: Option<f64>,
    },
    /// Evaluate a dataset and write the JSONL report and summary.
    Evaluate {
        #[arg(long)]
        segments: Option<PathBuf>,
        /// Overrides the configured or stored threshold.
        #[arg(long, allow_negative_numbers = true)]
        threshold: Option<f64>,
    },
    /// Per-segment scores from a report, or from gold annotations.
    Score {
        #[arg(long, conflicts_with = "gold")]
        report: Option<PathBuf>,
        /// Score the configured annotations instead of a report.
        #[arg(long)]
        gold: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Precision/recall/F1 of detected spans against gold spans per threshold.
    Spanmatch {
        /// Spans TSV or report JSONL.
        #[arg(long)]
        detected: PathBuf,
        /// Spans or annotations TSV.
        #[arg(long)]
        gold: PathBuf,
        /// Comma-separated thresholds.
        #[arg(long, value_delimiter = ',')]
        thetas: Option<Vec<f64>>,
    },
    /// System- and segment-level agreement with gold scores.
    Metaeval {
        /// Scores TSV or report JSONL.
        #[arg(long, required_unless_present = "components")]
        metric: Option<PathBuf>,
        #[arg(long, required_unless_present = "components")]
        gold: Option<PathBuf>,
        /// Four comma-separated components to average instead.
        #[arg(long, value_delimiter = ',', conflicts_with_all = ["metric", "gold"])]
        components: Option<Vec<f64>>,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Row label in the CSV.
        #[arg(long, default_value = "metric")]
        name: String,
    },
    /// Plot data from a report: per-system scores, error counts, spans.
    Report {
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

async fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides { cache_dir: cli.cache_dir, mock: cli.mock, max_inflight: cli.max_inflight, out_dir: cli.out });
    let ctx = commands::Ctx::new(cfg)?;
    match cli.command {
        Command::Calibrate { validation, validation_annotations, percentile } => {
            commands::calibrate(&ctx, validation, validation_annotations, percentile).await?
        }
        Command::Evaluate { segments, threshold } => {
            if commands::evaluate(&ctx, segments, threshold).await? > 0 {
                return Ok(ExitCode::from(EXIT_FLAGGED));
            }
        }
        Command::Score { report, gold, output } => commands::score(&ctx, report, gold, output)?,
        Command::Spanmatch { detected, gold, thetas } => commands::spanmatch(&ctx, &detected, &gold, thetas)?,
        Command::Metaeval { metric, gold, components, epsilon, name } => {
            commands::metaeval(&ctx, metric.as_deref(), gold.as_deref(), components, epsilon, &name)?
        }
        Command::Report { report } => commands::report(&ctx, report)?,
    }
    Ok(ExitCode::SUCCESS)
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
