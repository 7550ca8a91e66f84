use std::collections::{BTreeMap, HashMap};

use super::graph::{ExprGraph, Node, NodeId, VarId};
use super::EvalError;

/// Name-to-value lookup for evaluation.
pub trait Bindings {
    fn lookup(&self, name: &str) -> Option<f64>;
}

impl Bindings for HashMap<String, f64> {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl Bindings for BTreeMap<String, f64> {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl Bindings for [(&str, f64)] {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

impl<const N: usize> Bindings for [(&str, f64); N] {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.as_slice().lookup(name)
    }
}

impl ExprGraph {
    /// Evaluates `root` under named bindings. Piecewise nodes evaluate their
    /// guard and then only the selected branch.
    pub fn evaluate<B: Bindings + ?Sized>(&self, root: NodeId, bindings: &B) -> Result<f64, EvalError> {
        self.evaluate_with(root, |v| {
            let name = &self.var_spec(v).name;
            bindings.lookup(name).ok_or_else(|| EvalError::UnboundVariable(name.clone()))
        })
    }

    /// Evaluates with values indexed by [`VarId`].
    pub fn evaluate_dense(&self, root: NodeId, values: &[f64]) -> Result<f64, EvalError> {
        self.evaluate_with(root, |v| {
            values.get(v.index()).copied().ok_or_else(|| EvalError::UnboundVariable(self.var_spec(v).name.clone()))
        })
    }

    fn evaluate_with(
        &self,
        root: NodeId,
        mut var_value: impl FnMut(VarId) -> Result<f64, EvalError>,
    ) -> Result<f64, EvalError> {
        let mut memo: Vec<Option<f64>> = vec![None; root.index() + 1];
        let mut stack = vec![root];
        while let Some(&n) = stack.last() {
            if memo[n.index()].is_some() {
                stack.pop();
                continue;
            }
            let domain = |kind| EvalError::Domain { node: n, kind };
            let value = match self.node(n) {
                Node::Const(c) => c,
                Node::Var(v) => var_value(v)?,
                Node::Unary(op, a) => match memo[a.index()] {
                    Some(x) => op.apply(x).map_err(domain)?,
                    None => {
                        stack.push(a);
                        continue;
                    }
                },
                Node::Binary(op, a, b) => match (memo[a.index()], memo[b.index()]) {
                    (Some(x), Some(y)) => op.apply(x, y).map_err(domain)?,
                    (xa, _) => {
                        stack.push(if xa.is_none() { a } else { b });
                        continue;
                    }
                },
                Node::Piecewise { lhs, rel, rhs, then, otherwise } => match (memo[lhs.index()], memo[rhs.index()]) {
                    (Some(l), Some(r)) => {
                        let branch = if rel.holds(l, r) { then } else { otherwise };
                        match memo[branch.index()] {
                            Some(v) => v,
                            None => {
                                stack.push(branch);
                                continue;
                            }
                        }
                    }
                    (xl, _) => {
                        stack.push(if xl.is_none() { lhs } else { rhs });
                        continue;
                    }
                },
            };
            memo[n.index()] = Some(value);
            stack.pop();
        }
        Ok(memo[root.index()].expect("root evaluated"))
    }
}
