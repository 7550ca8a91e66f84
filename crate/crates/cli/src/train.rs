use std::fmt::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use hybrid_ad::dpsgd::{train, Dataset, DpsgdError, Summary, TrainConfig};
use serde::Serialize;

use crate::error::CliError;
use crate::input::{read_text, write_bytes};
use crate::output::{Envelope, Format};

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// TOML training configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// CSV dataset: feature columns, then the target column.
    #[arg(long)]
    pub data: PathBuf,
    /// Override the number of steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Override the worker count for per-sample gradients.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Write the privacy ledger export (JSON) here.
    #[arg(long)]
    pub ledger_out: Option<PathBuf>,
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    report: Option<String>,
    summary: &'a Summary,
}

fn classify(e: DpsgdError) -> CliError {
    if e.is_data_error() {
        CliError::Data(e.to_string())
    } else {
        CliError::Analysis(e.to_string())
    }
}

pub fn run(args: &TrainArgs, seed: Option<u64>, out: Option<&Path>, format: Format) -> Result<String, CliError> {
    let mut config = TrainConfig::from_toml(&read_text(&args.config)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.config.display())))?;
    if let Some(s) = args.steps {
        config.steps = s;
    }
    if let Some(w) = args.workers {
        config.workers = w;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let data = Dataset::load_csv(&args.data).map_err(|e| CliError::Data(format!("{}: {e}", args.data.display())))?;

    let start = Instant::now();
    let report = train(&config, &data).map_err(classify)?;
    let elapsed = start.elapsed();

    let jsonl = report.to_jsonl();
    if let Some(p) = &args.ledger_out {
        let mut s = serde_json::to_string_pretty(&report.summary.ledger).expect("ledger serializes");
        s.push('\n');
        write_bytes(p, s.as_bytes())?;
    }
    match out {
        Some(p) => write_bytes(p, jsonl.as_bytes())?,
        None if format == Format::Json => return Ok(jsonl),
        None => {}
    }
    let summary = &report.summary;
    Ok(match format {
        Format::Json => {
            Envelope::new("train", TrainOutput { report: out.map(|p| p.display().to_string()), summary }).to_json()
        }
        Format::Text => {
            let mut s = String::new();
            let mode = serde_json::to_value(summary.mode).expect("mode serializes");
            let _ = writeln!(
                s,
                "mode {}, {} steps, {} parameters",
                mode.as_str().unwrap_or_default(),
                summary.steps,
                summary.parameters.len()
            );
            if let Some(k) = summary.k_precomputed {
                let _ = writeln!(s, "precomputed K {} (lower {})", k, summary.k_precomputed_lower.unwrap_or(f64::NAN));
            }
            let _ = writeln!(s, "train accuracy {:.4}, loss {:.6}", summary.train_accuracy, summary.train_loss);
            let _ = writeln!(s, "clipped samples {}", summary.total_clipped);
            if let Some(m) = summary.max_norm {
                let _ = writeln!(s, "max per-sample gradient norm {m}");
            }
            if summary.per_step_fallbacks > 0 {
                let _ = writeln!(s, "per-step searches out of budget {}", summary.per_step_fallbacks);
            }
            if summary.bias_warning {
                let _ = writeln!(
                    s,
                    "warning: projection moved most weights on {} steps; the weight box may be too tight",
                    summary.bias_warning_steps
                );
            }
            if summary.private {
                for c in &summary.ledger.conversions {
                    let _ = writeln!(s, "privacy: ({}, {})-DP at alpha {}", c.epsilon, c.delta, c.alpha);
                }
            } else {
                let _ = writeln!(s, "privacy: none (noise multiplier is 0)");
            }
            let _ = writeln!(s, "trained in {:.2} s", elapsed.as_secs_f64());
            if let Some(p) = out {
                let _ = writeln!(s, "report written to {}", p.display());
            }
            s
        }
    })
}
