use crate::bounds::declared_enclosure;
use crate::expr::{BinaryOp, ExprError, ExprGraph, Node, NodeId, UnaryOp};

/// Which rewrite rules [`simplify_with`] may apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RuleSet {
    /// Identities that hold bit for bit wherever the original is defined.
    /// Rules that could change the sign of a zero or turn an infinity into
    /// a finite value fire only when declared bounds rule that out.
    Exact,
    /// Adds `log(exp x) -> x`, `x*0 -> 0` and unguarded zero rules.
    Full,
}

/// Algebraic simplification with the full rule set.
pub fn simplify(graph: &mut ExprGraph, root: NodeId) -> Result<NodeId, ExprError> {
    simplify_with(graph, root, RuleSet::Full)
}

pub fn simplify_with(graph: &mut ExprGraph, root: NodeId, rules: RuleSet) -> Result<NodeId, ExprError> {
    Ok(simplify_roots(graph, &[root], rules)?[0])
}

/// Simplifies several roots with one shared memo. Rewrites are applied
/// bottom-up and the pass is repeated until the roots stop changing.
pub fn simplify_roots(graph: &mut ExprGraph, roots: &[NodeId], rules: RuleSet) -> Result<Vec<NodeId>, ExprError> {
    let mut current = roots.to_vec();
    for _ in 0..=graph.len() {
        let next = pass(graph, &current, rules)?;
        if next == current {
            break;
        }
        current = next;
    }
    Ok(current)
}

fn pass(graph: &mut ExprGraph, roots: &[NodeId], rules: RuleSet) -> Result<Vec<NodeId>, ExprError> {
    let order = graph.topo_order_multi(roots);
    let mut map: Vec<NodeId> = (0..graph.len() as u32).map(crate::expr::NodeId).collect();
    for n in order {
        let node = graph.node(n);
        let mut id = graph.rebuild(node, |c| map[c.index()])?;
        for _ in 0..64 {
            match rewrite(graph, id, rules)? {
                Some(next) => id = next,
                None => break,
            }
        }
        if map.len() <= n.index() {
            map.resize(n.index() + 1, n);
        }
        map[n.index()] = id;
    }
    Ok(roots.iter().map(|r| map[r.index()]).collect())
}

fn const_is(graph: &ExprGraph, n: NodeId, v: f64) -> bool {
    graph.node(n).as_const() == Some(v)
}

/// Matches the constant bit for bit, so `+0` and `-0` are distinct.
fn const_bits(graph: &ExprGraph, n: NodeId, v: f64) -> bool {
    graph.node(n).as_const().is_some_and(|c| c.to_bits() == v.to_bits())
}

fn neg_arg(graph: &ExprGraph, n: NodeId) -> Option<NodeId> {
    match graph.node(n) {
        Node::Unary(UnaryOp::Neg, a) => Some(a),
        _ => None,
    }
}

fn nonzero(graph: &ExprGraph, n: NodeId) -> bool {
    declared_enclosure(graph, n).is_some_and(|iv| iv.is_bounded() && !iv.contains_zero())
}

fn finite(graph: &ExprGraph, n: NodeId) -> bool {
    declared_enclosure(graph, n).is_some_and(|iv| iv.is_bounded())
}

/// `x + 0 -> x` and friends are exact except for the sign of a zero sum.
fn drops_zero(g: &ExprGraph, zero: NodeId, x: NodeId, rules: RuleSet, absorbing: f64) -> bool {
    match rules {
        RuleSet::Full => const_is(g, zero, 0.0),
        RuleSet::Exact => const_bits(g, zero, absorbing) || (const_is(g, zero, 0.0) && nonzero(g, x)),
    }
}

fn rewrite(g: &mut ExprGraph, id: NodeId, rules: RuleSet) -> Result<Option<NodeId>, ExprError> {
    let full = rules == RuleSet::Full;
    let out = match g.node(id) {
        Node::Unary(UnaryOp::Neg, a) => neg_arg(g, a),
        Node::Unary(UnaryOp::Log, a) if full => match g.node(a) {
            Node::Unary(UnaryOp::Exp, x) => Some(x),
            _ => None,
        },
        Node::Binary(BinaryOp::Add, a, b) => {
            if drops_zero(g, b, a, rules, -0.0) {
                Some(a)
            } else if drops_zero(g, a, b, rules, -0.0) {
                Some(b)
            } else if let Some(c) = neg_arg(g, b) {
                Some(g.sub(a, c)?)
            } else if let Some(c) = neg_arg(g, a) {
                Some(g.sub(b, c)?)
            } else {
                None
            }
        }
        Node::Binary(BinaryOp::Sub, a, b) => {
            if drops_zero(g, b, a, rules, 0.0) {
                Some(a)
            } else if a == b && (full || finite(g, a)) {
                Some(g.zero())
            } else if drops_zero(g, a, b, rules, -0.0) {
                Some(g.neg(b)?)
            } else if let Some(c) = neg_arg(g, b) {
                Some(g.add(a, c)?)
            } else {
                None
            }
        }
        Node::Binary(BinaryOp::Mul, a, b) => {
            if const_is(g, b, 1.0) {
                Some(a)
            } else if const_is(g, a, 1.0) {
                Some(b)
            } else if full && (const_is(g, a, 0.0) || const_is(g, b, 0.0)) {
                Some(g.zero())
            } else if const_is(g, b, -1.0) {
                Some(g.neg(a)?)
            } else if const_is(g, a, -1.0) {
                Some(g.neg(b)?)
            } else if a == b {
                Some(g.powi(a, 2)?)
            } else {
                None
            }
        }
        Node::Binary(BinaryOp::Div, a, b) => {
            if const_is(g, b, 1.0) {
                Some(a)
            } else if a == b && nonzero(g, a) {
                Some(g.one())
            } else {
                None
            }
        }
        Node::Binary(BinaryOp::Pow, a, b) => {
            if const_is(g, b, 1.0) {
                Some(a)
            } else if const_is(g, b, 0.0) {
                Some(g.one())
            } else {
                None
            }
        }
        Node::Piecewise { then, otherwise, .. } if then == otherwise => Some(then),
        _ => None,
    };
    Ok(out.filter(|&n| n != id))
}
