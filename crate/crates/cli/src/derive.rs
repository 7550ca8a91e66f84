use std::fmt::Write;

use clap::Args;
use hybrid_ad::{grad, grad_norm, print_expr};
use serde::Serialize;

use crate::error::CliError;
use crate::input::{var_names, ExprInput};
use crate::output::{Envelope, Format};

#[derive(Args, Debug)]
pub struct DeriveArgs {
    #[command(flatten)]
    pub input: ExprInput,
}

#[derive(Serialize)]
struct Partial {
    var: String,
    expr: String,
}

#[derive(Serialize)]
struct DeriveOutput {
    expression: String,
    variables: Vec<String>,
    partials: Vec<Partial>,
    norm: String,
}

pub fn run(args: &DeriveArgs, format: Format) -> Result<String, CliError> {
    let (mut graph, root) = args.input.load()?;
    let wrt = args.input.wrt(&graph)?;
    let mut bundle = grad(&mut graph, root, &wrt).map_err(|e| CliError::Analysis(e.to_string()))?;
    let norm = grad_norm(&mut graph, &mut bundle).map_err(|e| CliError::Analysis(e.to_string()))?;
    let names = var_names(&graph, &wrt);
    let out = DeriveOutput {
        expression: print_expr(&graph, root),
        partials: names
            .iter()
            .zip(&bundle.partials)
            .map(|(n, p)| Partial { var: n.clone(), expr: print_expr(&graph, *p) })
            .collect(),
        variables: names,
        norm: print_expr(&graph, norm),
    };
    Ok(match format {
        Format::Json => Envelope::new("derive", out).to_json(),
        Format::Text => {
            let mut s = format!("f = {}\n", out.expression);
            for p in &out.partials {
                let _ = writeln!(s, "df/d{} = {}", p.var, p.expr);
            }
            let _ = writeln!(s, "|grad f| = {}", out.norm);
            s
        }
    })
}
