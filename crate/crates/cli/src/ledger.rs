use std::fmt::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use hybrid_ad::dp::{GaussianMechanism, LedgerExport, Noise, PrivacyLedger};
use hybrid_ad::dpsgd::Record;

use crate::error::CliError;
use crate::input::read_text;
use crate::output::{Envelope, Format};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Convention {
    /// std = σ·K
    Multiplier,
    /// variance = σ²·K
    Variance,
    /// σ is the absolute standard deviation
    Std,
}

#[derive(Args, Debug)]
pub struct LedgerArgs {
    /// Training report (JSON lines) whose events are re-accounted.
    #[arg(long, conflicts_with_all = ["sensitivity", "sigma"])]
    pub report: Option<PathBuf>,
    /// Sensitivity K of a Gaussian mechanism.
    #[arg(long, requires = "sigma")]
    pub sensitivity: Option<f64>,
    /// Noise parameter, read according to --convention.
    #[arg(long, requires = "sensitivity")]
    pub sigma: Option<f64>,
    #[arg(long, value_enum, default_value_t = Convention::Multiplier)]
    pub convention: Convention,
    /// Number of times the mechanism is applied.
    #[arg(long, default_value_t = 1)]
    pub count: u64,
    /// δ values for (ε, δ) conversion.
    #[arg(long, value_delimiter = ',', default_value = "1e-5")]
    pub delta: Vec<f64>,
    /// Extra Rényi orders added to the standard grid.
    #[arg(long, value_delimiter = ',')]
    pub orders: Vec<f64>,
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn events_from_report(path: &Path) -> Result<Vec<(GaussianMechanism, String)>, CliError> {
    let text = read_text(path)?;
    let data = |m: String| CliError::Data(format!("{}: {m}", path.display()));
    let mut summary = None;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: Record = serde_json::from_str(line).map_err(|e| data(format!("line {}: {e}", i + 1)))?;
        if let Record::Summary(s) = rec {
            summary = Some(s);
        }
    }
    let summary = summary.ok_or_else(|| data("no summary record".into()))?;
    summary
        .ledger
        .events
        .iter()
        .map(|ev| {
            GaussianMechanism::new(ev.sensitivity, ev.noise)
                .map(|m| (m, ev.mechanism.clone()))
                .map_err(|e| data(format!("event {}: {e}", ev.step)))
        })
        .collect()
}

pub fn run(args: &LedgerArgs, format: Format) -> Result<String, CliError> {
    let mut ledger = PrivacyLedger::with_orders(&args.orders).map_err(usage)?;
    match (&args.report, args.sensitivity, args.sigma) {
        (Some(path), _, _) => {
            for (mech, label) in events_from_report(path)? {
                ledger.compose_labeled(&mech, &label);
            }
        }
        (None, Some(k), Some(sigma)) => {
            let noise = match args.convention {
                Convention::Multiplier => Noise::Multiplier(sigma),
                Convention::Variance => Noise::Variance(sigma),
                Convention::Std => Noise::Std(sigma),
            };
            let mech = GaussianMechanism::new(k, noise).map_err(usage)?;
            for _ in 0..args.count {
                ledger.compose(&mech);
            }
        }
        _ => return Err(CliError::Usage("give either --report or --sensitivity with --sigma".into())),
    }
    let export: LedgerExport = ledger.export(&args.delta).map_err(usage)?;
    Ok(match format {
        Format::Json => Envelope::new("ledger", export).to_json(),
        Format::Text => {
            let mut s = String::new();
            let _ = writeln!(s, "{} events", export.events.len());
            let _ = writeln!(s, "alpha    epsilon");
            for p in &export.rdp {
                let _ = writeln!(s, "{:<8} {}", p.alpha, p.epsilon);
            }
            for c in &export.conversions {
                let _ = writeln!(s, "({}, {})-DP at alpha {}", c.epsilon, c.delta, c.alpha);
            }
            s
        }
    })
}
