use std::fmt::Write;

use clap::Args;
use hybrid_ad::dp::{rdp_epsilon, Conversion, GaussianMechanism, PrivacyLedger, RdpPoint, DEFAULT_ORDERS};
use hybrid_ad::{lipschitz_constant, print_expr, InputBox, LipschitzOptions, LipschitzReport};
use serde::Serialize;

use crate::error::CliError;
use crate::input::{var_names, ExprInput};
use crate::output::{Envelope, Format};

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub input: ExprInput,
    /// Rényi orders for the RDP line (default: the standard grid).
    #[arg(long, value_delimiter = ',')]
    pub alpha: Vec<f64>,
    /// Absolute standard deviation of Gaussian noise added to the output.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// δ values for (ε, δ) conversion of one release; needs --sigma.
    #[arg(long, value_delimiter = ',')]
    pub delta: Vec<f64>,
    /// Relative gap at which branch and bound stops.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Maximum number of box expansions.
    #[arg(long)]
    pub budget: Option<usize>,
}

#[derive(Serialize)]
struct Rdp {
    sigma: f64,
    points: Vec<RdpPoint>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    conversions: Vec<Conversion>,
}

#[derive(Serialize)]
struct AnalyzeOutput {
    expression: String,
    variables: Vec<String>,
    report: LipschitzReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    rdp: Option<Rdp>,
}

fn dp_error(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

pub fn run(args: &AnalyzeArgs, format: Format) -> Result<String, CliError> {
    if args.sigma.is_none() && !(args.alpha.is_empty() && args.delta.is_empty()) {
        return Err(CliError::Usage("--alpha and --delta require --sigma".into()));
    }
    let (mut graph, root) = args.input.load()?;
    let wrt = args.input.wrt(&graph)?;
    let mut opts = LipschitzOptions::default();
    if let Some(t) = args.tolerance {
        opts.tolerance = t;
    }
    if let Some(b) = args.budget {
        opts.budget = b;
    }
    let bounds = InputBox::from_graph(&graph);
    let report =
        lipschitz_constant(&mut graph, root, &wrt, &bounds, &opts).map_err(|e| CliError::Analysis(e.to_string()))?;

    let rdp = match args.sigma {
        None => None,
        Some(sigma) => {
            let mech = GaussianMechanism::with_std(report.k_upper, sigma).map_err(dp_error)?;
            let orders = if args.alpha.is_empty() { DEFAULT_ORDERS.to_vec() } else { args.alpha.clone() };
            let points = orders
                .iter()
                .map(|&alpha| rdp_epsilon(&mech, alpha).map(|epsilon| RdpPoint { alpha, epsilon }))
                .collect::<Result<Vec<_>, _>>()
                .map_err(dp_error)?;
            let mut conversions = Vec::new();
            if !args.delta.is_empty() {
                let mut ledger = PrivacyLedger::with_orders(&args.alpha).map_err(dp_error)?;
                ledger.compose(&mech);
                conversions = ledger.export(&args.delta).map_err(dp_error)?.conversions;
            }
            Some(Rdp { sigma, points, conversions })
        }
    };

    let out = AnalyzeOutput { expression: print_expr(&graph, root), variables: var_names(&graph, &wrt), report, rdp };
    Ok(match format {
        Format::Json => Envelope::new("analyze", out).to_json(),
        Format::Text => text(&out),
    })
}

fn text(out: &AnalyzeOutput) -> String {
    let r = &out.report;
    let mut s = String::new();
    let _ = writeln!(s, "f = {}", out.expression);
    let _ = writeln!(s, "K upper    {}", r.k_upper);
    let _ = writeln!(s, "K lower    {}", r.k_lower);
    let _ = writeln!(s, "rel. gap   {:.3e} (tolerance {})", r.relative_gap(), r.tolerance);
    let _ = writeln!(s, "iterations {}", r.iterations);
    let witness: Vec<String> = r.witness.iter().map(|(k, v)| format!("{k} = {v}")).collect();
    let _ = writeln!(s, "witness    {}", witness.join(", "));
    if !r.flags.is_empty() {
        let _ = writeln!(s, "flags      {}", r.flags.join(", "));
    }
    if !r.closed_form.is_empty() {
        let _ = writeln!(s, "|grad f| = {}", r.closed_form);
    }
    if let Some(rdp) = &out.rdp {
        let _ = writeln!(s, "RDP with noise std {}:", rdp.sigma);
        for p in &rdp.points {
            let _ = writeln!(s, "  ({}, {})", p.alpha, p.epsilon);
        }
        for c in &rdp.conversions {
            let _ = writeln!(s, "  (eps, delta) = ({}, {}) at alpha {}", c.epsilon, c.delta, c.alpha);
        }
    }
    s
}
