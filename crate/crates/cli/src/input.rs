use std::path::{Path, PathBuf};

use clap::Args;
use hybrid_ad::expr::{ExprGraph, NodeId, VarId};
use hybrid_ad::parser::{parse_declarations, parse_with_declarations};

use crate::error::CliError;

#[derive(Args, Debug, Clone)]
#[group(required = true, multiple = false)]
pub struct ExprSource {
    /// Expression text, e.g. "a*w/h^2".
    #[arg(long)]
    pub expr: Option<String>,
    /// File holding the expression.
    #[arg(long)]
    pub expr_file: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ExprInput {
    #[command(flatten)]
    pub source: ExprSource,
    /// Variable declarations, one `name in [lo, hi]` per line.
    #[arg(long)]
    pub bounds_file: Option<PathBuf>,
    /// Variables to differentiate with respect to (default: all, in
    /// declaration order).
    #[arg(long, value_delimiter = ',')]
    pub wrt: Vec<String>,
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

impl ExprInput {
    pub fn load(&self) -> Result<(ExprGraph, NodeId), CliError> {
        let decls = match &self.bounds_file {
            Some(p) => {
                parse_declarations(&read_text(p)?).map_err(|e| CliError::Parse(format!("{}:{e}", p.display())))?
            }
            None => Vec::new(),
        };
        match (&self.source.expr, &self.source.expr_file) {
            (Some(text), _) => parse_with_declarations(text, &decls).map_err(|e| CliError::Parse(e.to_string())),
            (None, Some(p)) => parse_with_declarations(&read_text(p)?, &decls)
                .map_err(|e| CliError::Parse(format!("{}:{e}", p.display()))),
            (None, None) => Err(CliError::Usage("one of --expr or --expr-file is required".into())),
        }
    }

    /// Requested variables, or every declared variable.
    pub fn wrt(&self, graph: &ExprGraph) -> Result<Vec<VarId>, CliError> {
        let ids: Vec<VarId> = if self.wrt.is_empty() {
            graph.vars().iter().map(|s| graph.var_id(&s.name).expect("declared")).collect()
        } else {
            self.wrt
                .iter()
                .map(|n| graph.var_id(n).ok_or_else(|| CliError::Usage(format!("--wrt names unknown variable {n:?}"))))
                .collect::<Result<_, _>>()?
        };
        if ids.is_empty() {
            return Err(CliError::Usage("expression has no variables to differentiate".into()));
        }
        Ok(ids)
    }
}

pub fn var_names(graph: &ExprGraph, ids: &[VarId]) -> Vec<String> {
    ids.iter().map(|v| graph.var_spec(*v).name.clone()).collect()
}
