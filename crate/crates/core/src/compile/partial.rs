use std::collections::BTreeMap;

use crate::expr::{ExprError, ExprGraph, Node, NodeId};

use super::kernel::{Instr, KernelError, KernelProgram};
use super::passes::{constant_fold, dead_code};

/// Graph left after binding some variables to constants.
#[derive(Clone, Debug)]
pub struct Residual {
    pub graph: ExprGraph,
    pub roots: Vec<NodeId>,
}

fn collect<S: AsRef<str>>(bindings: impl IntoIterator<Item = (S, f64)>) -> BTreeMap<String, f64> {
    bindings.into_iter().map(|(k, v)| (k.as_ref().to_string(), v)).collect()
}

/// Substitutes constants for the bound variables of `roots` and refolds.
/// Unbound variables keep their declaration order in the residual graph.
pub fn partial_evaluate<S: AsRef<str>>(
    graph: &ExprGraph,
    roots: &[NodeId],
    bindings: impl IntoIterator<Item = (S, f64)>,
) -> Result<Residual, ExprError> {
    let bound = collect(bindings);
    if let Some(name) = bound.keys().find(|n| graph.var_id(n).is_none()) {
        return Err(ExprError::UnknownVariable(name.clone()));
    }
    let mut out = ExprGraph::new();
    let mut var_map = Vec::with_capacity(graph.vars().len());
    for spec in graph.vars() {
        var_map.push(match bound.get(&spec.name) {
            Some(&v) => out.constant(v)?,
            None => out.declare(spec.clone())?,
        });
    }
    let order = graph.topo_order_multi(roots);
    let mut map: Vec<Option<NodeId>> = vec![None; order.last().map_or(0, |n| n.index() + 1)];
    for n in order {
        map[n.index()] = Some(match graph.node(n) {
            Node::Var(v) => var_map[v.index()],
            node => out.rebuild(node, |c| map[c.index()].expect("child mapped first"))?,
        });
    }
    let roots: Vec<NodeId> = roots.iter().map(|r| map[r.index()].expect("root mapped")).collect();
    for &r in &roots {
        out.add_root(r);
    }
    Ok(Residual { graph: out, roots })
}

impl KernelProgram {
    /// Specializes the program on the bound inputs. The remaining inputs
    /// keep their relative order.
    pub fn partial_evaluate<S: AsRef<str>>(
        &self,
        bindings: impl IntoIterator<Item = (S, f64)>,
    ) -> Result<KernelProgram, KernelError> {
        let bound = collect(bindings);
        if let Some(name) = bound.keys().find(|n| !self.inputs.contains(n)) {
            return Err(KernelError::UnknownInput(name.clone()));
        }
        let mut reindex = Vec::with_capacity(self.inputs.len());
        let mut inputs = Vec::new();
        for name in &self.inputs {
            reindex.push(match bound.get(name) {
                Some(&v) => Err(v),
                None => {
                    inputs.push(name.clone());
                    Ok(inputs.len() as u32 - 1)
                }
            });
        }
        let instructions = self
            .instructions
            .iter()
            .map(|ins| match *ins {
                Instr::Input { dest, index } => match reindex[index as usize] {
                    Ok(index) => Instr::Input { dest, index },
                    Err(value) => Instr::Const { dest, value },
                },
                other => other,
            })
            .collect();
        let mut k = KernelProgram { inputs, outputs: self.outputs.clone(), slot_count: self.slot_count, instructions };
        constant_fold(&mut k);
        dead_code(&mut k);
        Ok(k)
    }
}
