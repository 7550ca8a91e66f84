//! Reverse-mode differentiation with symbolic adjoints.
//!
//! One backward sweep over the reachable subgraph interns every adjoint as
//! a new node of the same graph, so the partials are closed-form
//! expressions that can be printed, compiled, bounded or differentiated
//! again.

use serde::Serialize;
use thiserror::Error;

use crate::compile::{simplify_roots, RuleSet};
use crate::expr::{BinaryOp, ExprError, ExprGraph, Node, NodeId, Relation, UnaryOp, VarId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdError {
    #[error("cannot differentiate with respect to unknown variable {0:?}")]
    UnknownVariable(String),
    #[error("gradient has no partials")]
    EmptyBundle,
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Partials of one root, all living in the root's graph.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientBundle {
    pub source: NodeId,
    pub wrt: Vec<VarId>,
    pub partials: Vec<NodeId>,
    pub norm: Option<NodeId>,
}

impl GradientBundle {
    pub fn partial(&self, var: VarId) -> Option<NodeId> {
        self.wrt.iter().position(|v| *v == var).map(|i| self.partials[i])
    }
}

fn is_const(g: &ExprGraph, n: NodeId, v: f64) -> bool {
    g.node(n).as_const() == Some(v)
}

fn smul(g: &mut ExprGraph, a: NodeId, b: NodeId) -> Result<NodeId, ExprError> {
    if is_const(g, a, 1.0) {
        Ok(b)
    } else if is_const(g, b, 1.0) {
        Ok(a)
    } else {
        g.mul(a, b)
    }
}

fn sadd(g: &mut ExprGraph, a: NodeId, b: NodeId) -> Result<NodeId, ExprError> {
    if is_const(g, a, 0.0) {
        Ok(b)
    } else if is_const(g, b, 0.0) {
        Ok(a)
    } else {
        g.add(a, b)
    }
}

/// `piecewise(l rel r, x, 0)` or, with `live_then == false`, `piecewise(l rel r, 0, x)`.
fn route(
    g: &mut ExprGraph,
    (l, rel, r): (NodeId, Relation, NodeId),
    x: NodeId,
    live_then: bool,
) -> Result<NodeId, ExprError> {
    let zero = g.zero();
    if live_then {
        g.piecewise(l, rel, r, x, zero)
    } else {
        g.piecewise(l, rel, r, zero, x)
    }
}

/// Differentiable children of `n`, i.e. excluding piecewise guards.
fn diff_children(node: Node) -> impl Iterator<Item = NodeId> {
    let arr = match node {
        Node::Const(_) | Node::Var(_) => [None, None],
        Node::Unary(_, a) => [Some(a), None],
        Node::Binary(_, a, b) => [Some(a), Some(b)],
        Node::Piecewise { then, otherwise, .. } => [Some(then), Some(otherwise)],
    };
    arr.into_iter().flatten()
}

/// Symbolic gradient of `root` with respect to `wrt`. Partials of
/// variables that `root` does not depend on are the constant 0.
pub fn grad(graph: &mut ExprGraph, root: NodeId, wrt: &[VarId]) -> Result<GradientBundle, AdError> {
    if !graph.contains(root) {
        return Err(ExprError::UnknownNode(root).into());
    }
    for v in wrt {
        if v.index() >= graph.vars().len() {
            return Err(AdError::UnknownVariable(format!("#{}", v.index())));
        }
    }
    let order = graph.topo_order(root);
    let size = root.index() + 1;
    let mut relevant = vec![false; size];
    let targets: Vec<NodeId> = wrt.iter().map(|v| graph.var_node(*v)).collect();
    for &n in &order {
        let node = graph.node(n);
        relevant[n.index()] = match node {
            Node::Var(_) => targets.contains(&n),
            _ => diff_children(node).any(|c| relevant[c.index()]),
        };
    }

    let mut contributions: Vec<Vec<NodeId>> = vec![Vec::new(); size];
    if relevant[root.index()] {
        contributions[root.index()].push(graph.one());
    }
    let mut adjoint: Vec<Option<NodeId>> = vec![None; size];
    for &n in order.iter().rev() {
        if !relevant[n.index()] {
            continue;
        }
        let terms = std::mem::take(&mut contributions[n.index()]);
        let mut acc: Option<NodeId> = None;
        for t in terms {
            acc = Some(match acc {
                None => t,
                Some(a) => sadd(graph, a, t)?,
            });
        }
        let Some(bar) = acc else { continue };
        if is_const(graph, bar, 0.0) {
            continue;
        }
        adjoint[n.index()] = Some(bar);
        let g = &mut *graph;
        let mut push = |c: NodeId, v: NodeId, g: &ExprGraph| {
            if relevant[c.index()] && !is_const(g, v, 0.0) {
                contributions[c.index()].push(v);
            }
        };
        match g.node(n) {
            Node::Const(_) | Node::Var(_) => {}
            Node::Unary(op, a) => {
                if !relevant[a.index()] {
                    continue;
                }
                let local = match op {
                    UnaryOp::Neg => g.neg(bar)?,
                    UnaryOp::Exp => smul(g, bar, n)?,
                    UnaryOp::Log => g.div(bar, a)?,
                    UnaryOp::Sqrt => {
                        let two = g.constant(2.0)?;
                        let d = g.mul(two, n)?;
                        g.div(bar, d)?
                    }
                    UnaryOp::Tanh => {
                        let one = g.one();
                        let sq = g.powi(n, 2)?;
                        let d = g.sub(one, sq)?;
                        smul(g, bar, d)?
                    }
                    UnaryOp::Sigmoid => {
                        let one = g.one();
                        let c = g.sub(one, n)?;
                        let d = g.mul(n, c)?;
                        smul(g, bar, d)?
                    }
                    UnaryOp::Abs => {
                        let zero = g.zero();
                        let one = g.one();
                        let minus = g.constant(-1.0)?;
                        let pos = g.piecewise(zero, Relation::Lt, a, one, zero)?;
                        let sign = g.piecewise(a, Relation::Lt, zero, minus, pos)?;
                        smul(g, bar, sign)?
                    }
                };
                push(a, local, g);
            }
            Node::Binary(op, a, b) => match op {
                BinaryOp::Add => {
                    push(a, bar, g);
                    push(b, bar, g);
                }
                BinaryOp::Sub => {
                    push(a, bar, g);
                    if relevant[b.index()] {
                        let nb = g.neg(bar)?;
                        push(b, nb, g);
                    }
                }
                BinaryOp::Mul => {
                    if relevant[a.index()] {
                        let v = smul(g, bar, b)?;
                        push(a, v, g);
                    }
                    if relevant[b.index()] {
                        let v = smul(g, bar, a)?;
                        push(b, v, g);
                    }
                }
                BinaryOp::Div => {
                    if relevant[a.index()] {
                        let v = g.div(bar, b)?;
                        push(a, v, g);
                    }
                    if relevant[b.index()] {
                        let t = smul(g, bar, n)?;
                        let t = g.neg(t)?;
                        let v = g.div(t, b)?;
                        push(b, v, g);
                    }
                }
                BinaryOp::Pow => {
                    if let Some(c) = g.node(b).as_const() {
                        if relevant[a.index()] {
                            let cm1 = g.constant(c - 1.0)?;
                            let p = g.pow(a, cm1)?;
                            let cc = g.constant(c)?;
                            let d = smul(g, cc, p)?;
                            let v = smul(g, bar, d)?;
                            push(a, v, g);
                        }
                    } else {
                        if relevant[a.index()] {
                            let t = g.mul(n, b)?;
                            let t = g.div(t, a)?;
                            let v = smul(g, bar, t)?;
                            push(a, v, g);
                        }
                        if relevant[b.index()] {
                            let l = g.unary(UnaryOp::Log, a)?;
                            let t = g.mul(n, l)?;
                            let v = smul(g, bar, t)?;
                            push(b, v, g);
                        }
                    }
                }
                BinaryOp::Min | BinaryOp::Max => {
                    let guard = if op == BinaryOp::Min { (a, Relation::Le, b) } else { (b, Relation::Le, a) };
                    if relevant[a.index()] {
                        let v = route(g, guard, bar, true)?;
                        push(a, v, g);
                    }
                    if relevant[b.index()] {
                        let v = route(g, guard, bar, false)?;
                        push(b, v, g);
                    }
                }
            },
            Node::Piecewise { lhs, rel, rhs, then, otherwise } => {
                let guard = (lhs, rel, rhs);
                if relevant[then.index()] {
                    let v = route(g, guard, bar, true)?;
                    push(then, v, g);
                }
                if relevant[otherwise.index()] {
                    let v = route(g, guard, bar, false)?;
                    push(otherwise, v, g);
                }
            }
        }
    }

    let zero = graph.zero();
    let raw: Vec<NodeId> =
        targets.iter().map(|t| if t.index() < size { adjoint[t.index()].unwrap_or(zero) } else { zero }).collect();
    let partials = simplify_roots(graph, &raw, RuleSet::Exact)?;
    Ok(GradientBundle { source: root, wrt: wrt.to_vec(), partials, norm: None })
}

/// [`grad`] with variables given by name.
pub fn grad_by_name(graph: &mut ExprGraph, root: NodeId, wrt: &[&str]) -> Result<GradientBundle, AdError> {
    let ids = wrt
        .iter()
        .map(|n| graph.var_id(n).ok_or_else(|| AdError::UnknownVariable((*n).to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    grad(graph, root, &ids)
}

/// `sqrt(sum of squared partials)`; zero partials are skipped. The result
/// is stored on the bundle and returned.
pub fn grad_norm(graph: &mut ExprGraph, bundle: &mut GradientBundle) -> Result<NodeId, AdError> {
    if bundle.partials.is_empty() {
        return Err(AdError::EmptyBundle);
    }
    let mut sum: Option<NodeId> = None;
    for &p in &bundle.partials {
        if is_const(graph, p, 0.0) {
            continue;
        }
        let sq = graph.powi(p, 2)?;
        sum = Some(match sum {
            None => sq,
            Some(s) => graph.add(s, sq)?,
        });
    }
    let norm = match sum {
        None => graph.zero(),
        Some(s) => graph.unary(UnaryOp::Sqrt, s)?,
    };
    let norm = simplify_roots(graph, &[norm], RuleSet::Exact)?[0];
    bundle.norm = Some(norm);
    Ok(norm)
}

/// Gradient of a per-individual loss with respect to its parameters.
/// Feature and target variables stay symbolic, so a kernel lowered from the
/// partials yields one gradient per batch row.
pub fn per_sample_grads(graph: &mut ExprGraph, loss: NodeId, weights: &[VarId]) -> Result<GradientBundle, AdError> {
    grad(graph, loss, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse, print_expr};

    fn central_difference(g: &ExprGraph, root: NodeId, point: &[(&str, f64)], var: &str) -> f64 {
        let h = 1e-6;
        let shift = |d: f64| -> Vec<(&str, f64)> {
            point.iter().map(|&(n, v)| if n == var { (n, v + d) } else { (n, v) }).collect()
        };
        let up = g.evaluate(root, shift(h).as_slice()).unwrap();
        let down = g.evaluate(root, shift(-h).as_slice()).unwrap();
        (up - down) / (2.0 * h)
    }

    #[test]
    fn bmi_partials() {
        let (mut g, root) = parse("a*w/h^2").unwrap();
        let b = grad_by_name(&mut g, root, &["a", "w", "h"]).unwrap();
        let at = [("a", 30.0), ("w", 70.0), ("h", 1.75)];
        let expected = [22.857_142_857, 9.795_918_367, -783.673_469_387];
        for (i, name) in ["a", "w", "h"].iter().enumerate() {
            let v = g.evaluate(b.partials[i], &at).unwrap();
            let fd = central_difference(&g, root, &at, name);
            assert!(((v - fd) / fd).abs() < 1e-6, "{name}: {v} vs {fd}");
            assert!((v - expected[i]).abs() < 1e-6, "{name}: {v}");
        }
    }

    #[test]
    fn bmi_norm() {
        let (mut g, root) = parse("a*w/h^2").unwrap();
        let mut b = grad_by_name(&mut g, root, &["a", "w", "h"]).unwrap();
        let n = grad_norm(&mut g, &mut b).unwrap();
        let (a, w, h) = (30.0f64, 70.0f64, 1.75f64);
        let closed = (w * w + a * a + 4.0 * a * a * w * w / (h * h)).sqrt() / (h * h);
        let v = g.evaluate(n, &[("a", a), ("w", w), ("h", h)]).unwrap();
        assert!(((v - closed) / closed).abs() < 1e-12);
        assert!((v - 784.067_927_936).abs() < 1e-6);
    }

    #[test]
    fn square() {
        let (mut g, root) = parse("x^2").unwrap();
        let b = grad_by_name(&mut g, root, &["x"]).unwrap();
        assert_eq!(g.evaluate(b.partials[0], &[("x", 3.0)]).unwrap(), 6.0);
    }

    #[test]
    fn absent_variable_is_literal_zero() {
        let (mut g, root) = parse("x*y").unwrap();
        g.var("z").unwrap();
        let b = grad_by_name(&mut g, root, &["z"]).unwrap();
        assert_eq!(g.node(b.partials[0]).as_const(), Some(0.0));
        assert!(matches!(grad_by_name(&mut g, root, &["q"]), Err(AdError::UnknownVariable(_))));
    }

    #[test]
    fn norm_of_linear_functions() {
        let (mut g, root) = parse("3*x").unwrap();
        let mut b = grad_by_name(&mut g, root, &["x"]).unwrap();
        let n = grad_norm(&mut g, &mut b).unwrap();
        assert_eq!(g.node(n).as_const(), Some(3.0));

        let (mut g, root) = parse("x + y").unwrap();
        let mut b = grad_by_name(&mut g, root, &["x", "y"]).unwrap();
        let n = grad_norm(&mut g, &mut b).unwrap();
        assert_eq!(g.node(n).as_const(), Some(2f64.sqrt()));
    }

    #[test]
    fn closed_forms() {
        let (mut g, root) = parse("x").unwrap();
        let b = grad_by_name(&mut g, root, &["x"]).unwrap();
        assert_eq!(print_expr(&g, b.partials[0]), "1");
        let (mut g, root) = parse("tanh(x)").unwrap();
        let b = grad_by_name(&mut g, root, &["x"]).unwrap();
        assert_eq!(print_expr(&g, b.partials[0]), "1 - tanh(x)^2");
    }

    #[test]
    fn relu_subgradient_at_kink_is_zero() {
        let (mut g, root) = parse("relu(x)").unwrap();
        let b = grad_by_name(&mut g, root, &["x"]).unwrap();
        let d = |x: f64| g.evaluate(b.partials[0], &[("x", x)]).unwrap();
        assert_eq!((d(-1.0), d(0.0), d(2.0)), (0.0, 0.0, 1.0));
    }

    #[test]
    fn abs_min_max() {
        let (mut g, root) = parse("abs(x) + min(x, y) + 2*max(x, y)").unwrap();
        let b = grad_by_name(&mut g, root, &["x", "y"]).unwrap();
        let at = |x: f64, y: f64| {
            let env = [("x", x), ("y", y)];
            (g.evaluate(b.partials[0], &env).unwrap(), g.evaluate(b.partials[1], &env).unwrap())
        };
        assert_eq!(at(1.0, 2.0), (1.0 + 1.0, 2.0));
        assert_eq!(at(-3.0, -5.0), (-1.0 + 2.0, 1.0));
        assert_eq!(at(0.0, 1.0).0, 1.0);
    }

    #[test]
    fn general_power() {
        let (mut g, root) = parse("x^y").unwrap();
        let b = grad_by_name(&mut g, root, &["x", "y"]).unwrap();
        let at = [("x", 1.7), ("y", 2.3)];
        for (i, name) in ["x", "y"].iter().enumerate() {
            let v = g.evaluate(b.partials[i], &at).unwrap();
            let fd = central_difference(&g, root, &at, name);
            assert!(((v - fd) / fd).abs() < 1e-6, "{name}: {v} vs {fd}");
        }
    }

    #[test]
    fn second_order() {
        let (mut g, root) = parse("sigmoid(x)*exp(y) + sqrt(x*y) + log(x)/y").unwrap();
        let first = grad_by_name(&mut g, root, &["x", "y"]).unwrap();
        let second = grad_by_name(&mut g, first.partials[0], &["x", "y"]).unwrap();
        let at = [("x", 0.8), ("y", 1.3)];
        for (i, name) in ["x", "y"].iter().enumerate() {
            let v = g.evaluate(second.partials[i], &at).unwrap();
            let fd = central_difference(&g, first.partials[0], &at, name);
            assert!(((v - fd) / fd).abs() < 1e-5, "{name}: {v} vs {fd}");
        }
    }

    #[test]
    fn shared_adjoints_accumulate() {
        let (mut g, root) = parse("(x*y)*(x*y) + x*y").unwrap();
        let b = grad_by_name(&mut g, root, &["x"]).unwrap();
        let v = g.evaluate(b.partials[0], &[("x", 2.0), ("y", 3.0)]).unwrap();
        assert_eq!(v, 2.0 * 6.0 * 3.0 + 3.0);
    }
}
