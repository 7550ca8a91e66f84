use crate::expr::{BinaryOp, DomainError, ExprGraph, Node, NodeId, Relation, UnaryOp, VarId};

use super::Interval;

/// A domain violation at a node, carried lazily through the tape so that
/// it only surfaces when a live computation consumes it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fault {
    pub node: NodeId,
    pub kind: DomainError,
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Const(f64),
    Input(usize),
    Unary(UnaryOp, usize),
    Binary(BinaryOp, usize, usize),
    Piecewise { lhs: usize, rel: Relation, rhs: usize, then: usize, otherwise: usize },
}

/// Dense topological tape over the nodes reachable from a set of roots,
/// evaluable on interval boxes or on points.
#[derive(Clone, Debug)]
pub struct IntervalTape {
    ops: Vec<Op>,
    nodes: Vec<NodeId>,
    outputs: Vec<usize>,
    dims: usize,
}

impl IntervalTape {
    /// `dims` fixes the input order. Returns the variables in the roots'
    /// support that are missing from `dims` as the error.
    pub fn new(graph: &ExprGraph, roots: &[NodeId], dims: &[VarId]) -> Result<Self, Vec<VarId>> {
        let order = graph.topo_order_multi(roots);
        let mut slot = vec![usize::MAX; roots.iter().map(|r| r.index() + 1).max().unwrap_or(0)];
        let mut ops = Vec::with_capacity(order.len());
        let mut missing = Vec::new();
        for (i, &n) in order.iter().enumerate() {
            slot[n.index()] = i;
            let s = |c: NodeId| slot[c.index()];
            ops.push(match graph.node(n) {
                Node::Const(c) => Op::Const(c),
                Node::Var(v) => match dims.iter().position(|d| *d == v) {
                    Some(k) => Op::Input(k),
                    None => {
                        missing.push(v);
                        Op::Const(f64::NAN)
                    }
                },
                Node::Unary(op, a) => Op::Unary(op, s(a)),
                Node::Binary(op, a, b) => Op::Binary(op, s(a), s(b)),
                Node::Piecewise { lhs, rel, rhs, then, otherwise } => {
                    Op::Piecewise { lhs: s(lhs), rel, rhs: s(rhs), then: s(then), otherwise: s(otherwise) }
                }
            });
        }
        if !missing.is_empty() {
            return Err(missing);
        }
        let outputs = roots.iter().map(|r| slot[r.index()]).collect();
        Ok(IntervalTape { ops, nodes: order, outputs, dims: dims.len() })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Interval enclosure of every root over the box `inputs`.
    pub fn eval_box(
        &self,
        inputs: &[Interval],
        scratch: &mut Vec<Result<Interval, Fault>>,
    ) -> Vec<Result<Interval, Fault>> {
        assert_eq!(inputs.len(), self.dims);
        scratch.clear();
        for (i, op) in self.ops.iter().enumerate() {
            let fault = |kind| Fault { node: self.nodes[i], kind };
            let v = match *op {
                Op::Const(c) => Ok(Interval::point(c)),
                Op::Input(k) => Ok(inputs[k]),
                Op::Unary(u, a) => scratch[a].and_then(|x| x.unary(u).map_err(fault)),
                Op::Binary(b, x, y) => match (scratch[x], scratch[y]) {
                    (Ok(x), Ok(y)) => x.binary(b, y).map_err(fault),
                    (Err(e), _) | (_, Err(e)) => Err(e),
                },
                Op::Piecewise { lhs, rel, rhs, then, otherwise } => match (scratch[lhs], scratch[rhs]) {
                    (Ok(l), Ok(r)) => match l.compare(rel, &r) {
                        Some(true) => scratch[then],
                        Some(false) => scratch[otherwise],
                        None => match (scratch[then], scratch[otherwise]) {
                            (Ok(t), Ok(o)) => Ok(t.hull(&o)),
                            (Err(e), _) | (_, Err(e)) => Err(e),
                        },
                    },
                    (Err(e), _) | (_, Err(e)) => Err(e),
                },
            };
            scratch.push(v);
        }
        self.outputs.iter().map(|&o| scratch[o]).collect()
    }

    /// Point values of every root, bit-identical to graph evaluation.
    pub fn eval_point(&self, inputs: &[f64], scratch: &mut Vec<Result<f64, Fault>>) -> Vec<Result<f64, Fault>> {
        assert_eq!(inputs.len(), self.dims);
        scratch.clear();
        for (i, op) in self.ops.iter().enumerate() {
            let fault = |kind| Fault { node: self.nodes[i], kind };
            let v = match *op {
                Op::Const(c) => Ok(c),
                Op::Input(k) => Ok(inputs[k]),
                Op::Unary(u, a) => scratch[a].and_then(|x| u.apply(x).map_err(fault)),
                Op::Binary(b, x, y) => match (scratch[x], scratch[y]) {
                    (Ok(x), Ok(y)) => b.apply(x, y).map_err(fault),
                    (Err(e), _) | (_, Err(e)) => Err(e),
                },
                Op::Piecewise { lhs, rel, rhs, then, otherwise } => match (scratch[lhs], scratch[rhs]) {
                    (Ok(l), Ok(r)) => {
                        if rel.holds(l, r) {
                            scratch[then]
                        } else {
                            scratch[otherwise]
                        }
                    }
                    (Err(e), _) | (_, Err(e)) => Err(e),
                },
            };
            scratch.push(v);
        }
        self.outputs.iter().map(|&o| scratch[o]).collect()
    }
}
