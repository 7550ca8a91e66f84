//! `hybrid-ad`: closed-form gradients, sensitivity bounds, kernel
//! compilation and private training from the command line.
//!
//! Exit codes: 0 success, 2 usage, parse or analysis error, 3 data error.

mod analyze;
mod compile;
mod derive;
mod error;
mod input;
mod ledger;
mod output;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use error::CliError;
use output::{emit, Format};

#[derive(Parser, Debug)]
#[command(name = "hybrid-ad", version, about = "Symbolic gradients, Lipschitz bounds and private training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output format; JSON is the stable machine-readable form.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Output file (for compile: the kernel artifact).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed overriding any configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the partial derivatives and gradient norm of an expression.
    Derive(derive::DeriveArgs),
    /// Bound the gradient norm over a box and report the RDP guarantee.
    Analyze(analyze::AnalyzeArgs),
    /// Lower an expression (and optionally its gradient) to a kernel.
    Compile(compile::CompileArgs),
    /// Run DP-SGD on a CSV dataset.
    Train(train::TrainArgs),
    /// Compose Gaussian mechanisms and convert to (ε, δ).
    Ledger(ledger::LedgerArgs),
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let out = cli.out.as_deref();
    let text = match &cli.command {
        Command::Derive(a) => derive::run(a, cli.format)?,
        Command::Analyze(a) => analyze::run(a, cli.format)?,
        Command::Compile(a) => return emit(None, &compile::run(a, out, cli.format)?),
        Command::Train(a) => return emit(None, &train::run(a, cli.seed, out, cli.format)?),
        Command::Ledger(a) => ledger::run(a, cli.format)?,
    };
    emit(out, &text)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
