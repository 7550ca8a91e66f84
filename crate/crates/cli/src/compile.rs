use std::fmt::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use hybrid_ad::compile::{lower_labeled, partial_evaluate, CompileOptions, KernelProgram, Matrix, Pass};
use hybrid_ad::{grad, grad_norm, print_expr};
use serde::Serialize;

use crate::error::CliError;
use crate::input::{var_names, write_bytes, ExprInput};
use crate::output::{Envelope, Format};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Jit,
    Aot,
}

#[derive(Args, Debug)]
pub struct CompileArgs {
    #[command(flatten)]
    pub input: ExprInput,
    /// jit keeps shared subterms only; aot runs every pass.
    #[arg(long, value_enum, default_value_t = ModeArg::Aot)]
    pub mode: ModeArg,
    /// Explicit pass list overriding the mode default, or "none".
    #[arg(long, value_delimiter = ',')]
    pub passes: Option<Vec<String>>,
    /// Also emit the partials (`d_<var>`) and the gradient norm (`norm`).
    #[arg(long)]
    pub grad: bool,
    /// Fix variables to constants before lowering, as `name=value`.
    #[arg(long, value_delimiter = ',')]
    pub bind: Vec<String>,
    /// CSV with one column per kernel input; each row is executed.
    #[arg(long)]
    pub eval: Option<PathBuf>,
}

#[derive(Serialize)]
struct CompileOutput {
    mode: &'static str,
    passes: Vec<&'static str>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    instructions: usize,
    value_instructions: usize,
    slots: u32,
    artifact_bytes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    results: Option<Vec<Vec<f64>>>,
}

fn options(args: &CompileArgs) -> Result<CompileOptions, CliError> {
    let mut opts = match args.mode {
        ModeArg::Jit => CompileOptions::jit(),
        ModeArg::Aot => CompileOptions::aot(),
    };
    if let Some(list) = &args.passes {
        let names: Vec<&str> = list.iter().map(String::as_str).filter(|n| *n != "none").collect();
        let passes = names
            .iter()
            .map(|n| Pass::from_name(n).ok_or_else(|| CliError::Usage(format!("unknown pass {n:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        opts = opts.with_passes(passes);
    }
    Ok(opts)
}

fn bindings(args: &CompileArgs) -> Result<Vec<(String, f64)>, CliError> {
    args.bind
        .iter()
        .map(|b| {
            let (name, value) =
                b.split_once('=').ok_or_else(|| CliError::Usage(format!("--bind expects name=value, got {b:?}")))?;
            let v: f64 =
                value.trim().parse().map_err(|_| CliError::Usage(format!("--bind value {value:?} is not a number")))?;
            Ok((name.trim().to_string(), v))
        })
        .collect()
}

fn read_batch(path: &Path, inputs: &[String]) -> Result<Matrix, CliError> {
    let data = |m: String| CliError::Data(format!("{}: {m}", path.display()));
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| data(e.to_string()))?;
    let header: Vec<String> = rdr.headers().map_err(|e| data(e.to_string()))?.iter().map(str::to_string).collect();
    let cols = inputs
        .iter()
        .map(|n| header.iter().position(|h| h == n).ok_or_else(|| data(format!("no column for kernel input {n:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| data(e.to_string()))?;
        let row = cols
            .iter()
            .map(|&c| {
                let field = rec.get(c).unwrap_or("");
                field.parse::<f64>().map_err(|_| data(format!("row {i}: {field:?} is not a number")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Matrix::from_rows(inputs.len(), &rows).map_err(|e| data(e.to_string()))
}

pub fn run(args: &CompileArgs, out: Option<&Path>, format: Format) -> Result<String, CliError> {
    let opts = options(args)?;
    let binds = bindings(args)?;
    let (mut graph, root) = args.input.load()?;
    let mut labeled = vec![("f".to_string(), root)];
    if args.grad {
        let wrt = args.input.wrt(&graph)?;
        let mut bundle = grad(&mut graph, root, &wrt).map_err(|e| CliError::Analysis(e.to_string()))?;
        let norm = grad_norm(&mut graph, &mut bundle).map_err(|e| CliError::Analysis(e.to_string()))?;
        for (name, p) in var_names(&graph, &wrt).into_iter().zip(&bundle.partials) {
            labeled.push((format!("d_{name}"), *p));
        }
        labeled.push(("norm".into(), norm));
    }

    let start = Instant::now();
    let kernel: KernelProgram = if binds.is_empty() {
        lower_labeled(&graph, &labeled, &opts)
    } else {
        let roots: Vec<_> = labeled.iter().map(|(_, r)| *r).collect();
        let res = partial_evaluate(&graph, &roots, binds.iter().map(|(n, v)| (n.as_str(), *v)))
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let relabeled: Vec<_> = labeled.iter().map(|(l, _)| l.clone()).zip(res.roots).collect();
        lower_labeled(&res.graph, &relabeled, &opts)
    };
    let elapsed = start.elapsed();
    let bytes = kernel.to_bytes();
    if let Some(p) = out {
        write_bytes(p, &bytes)?;
    }

    let results = match &args.eval {
        None => None,
        Some(path) => {
            let batch = read_batch(path, &kernel.inputs)?;
            let m = kernel.execute(&batch).map_err(|e| CliError::Data(e.to_string()))?;
            Some((0..m.rows).map(|i| m.row(i).to_vec()).collect())
        }
    };

    let result = CompileOutput {
        mode: match args.mode {
            ModeArg::Jit => "jit",
            ModeArg::Aot => "aot",
        },
        passes: opts.passes.iter().map(|p| p.name()).collect(),
        inputs: kernel.inputs.clone(),
        outputs: kernel.outputs.iter().map(|(l, _)| l.clone()).collect(),
        instructions: kernel.len(),
        value_instructions: kernel.count(|i| i.dest().is_some()),
        slots: kernel.slot_count,
        artifact_bytes: bytes.len(),
        results,
    };
    Ok(match format {
        Format::Json => Envelope::new("compile", result).to_json(),
        Format::Text => {
            let mut s = String::new();
            let _ = writeln!(s, "f = {}", print_expr(&graph, root));
            let _ = writeln!(s, "mode {} with passes [{}]", result.mode, result.passes.join(", "));
            let _ = writeln!(s, "inputs  {}", result.inputs.join(", "));
            let _ = writeln!(s, "outputs {}", result.outputs.join(", "));
            let _ = writeln!(
                s,
                "{} instructions ({} values), {} slots, {} bytes",
                result.instructions, result.value_instructions, result.slots, result.artifact_bytes
            );
            let _ = writeln!(s, "compiled in {:.3} ms", elapsed.as_secs_f64() * 1e3);
            if let Some(p) = out {
                let _ = writeln!(s, "artifact written to {}", p.display());
            }
            for row in result.results.iter().flatten() {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(s, "{}", cells.join(", "));
            }
            s
        }
    })
}
