use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use super::scalar::{BinaryOp, Relation, UnaryOp};
use super::ExprError;
use crate::bounds::Interval;

/// Index of a node in its graph's arena.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub(crate) u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.0)
    }
}

/// Index of a declared variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub(crate) u32);

impl VarId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[default]
    Feature,
    Weight,
    Bias,
    Target,
    Hyper,
}

/// A named abstract input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarSpec {
    pub name: String,
    pub role: Role,
    pub bounds: Option<Interval>,
}

impl VarSpec {
    pub fn new(name: impl Into<String>, role: Role) -> Self {
        VarSpec { name: name.into(), role, bounds: None }
    }

    pub fn feature(name: impl Into<String>) -> Self {
        Self::new(name, Role::Feature)
    }

    pub fn with_bounds(mut self, bounds: Interval) -> Self {
        self.bounds = Some(bounds);
        self
    }

    pub fn validate(&self) -> Result<(), ExprError> {
        if !is_identifier(&self.name) {
            return Err(ExprError::InvalidName(self.name.clone()));
        }
        if let Some(b) = self.bounds {
            if !(b.lo.is_finite() && b.hi.is_finite() && b.lo <= b.hi) {
                return Err(ExprError::InvalidBounds(self.name.clone()));
            }
        }
        Ok(())
    }
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// One symbolic scalar operation. Children always precede the node in the
/// arena, so arena order is a topological order.
#[derive(Clone, Copy, Debug)]
pub enum Node {
    Const(f64),
    Var(VarId),
    Unary(UnaryOp, NodeId),
    Binary(BinaryOp, NodeId, NodeId),
    /// `if lhs rel rhs { then } else { otherwise }`
    Piecewise {
        lhs: NodeId,
        rel: Relation,
        rhs: NodeId,
        then: NodeId,
        otherwise: NodeId,
    },
}

impl Node {
    /// Children in evaluation order: guard operands first for piecewise nodes.
    pub fn children(&self) -> impl Iterator<Item = NodeId> {
        let arr = match *self {
            Node::Const(_) | Node::Var(_) => [None, None, None, None],
            Node::Unary(_, a) => [Some(a), None, None, None],
            Node::Binary(_, a, b) => [Some(a), Some(b), None, None],
            Node::Piecewise { lhs, rhs, then, otherwise, .. } => [Some(lhs), Some(rhs), Some(then), Some(otherwise)],
        };
        arr.into_iter().flatten()
    }

    pub fn as_const(&self) -> Option<f64> {
        match *self {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }
}

// Structural identity: constants compare by bit pattern so that 0.0 and -0.0
// stay distinct nodes.
impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        match (*self, *other) {
            (Node::Const(a), Node::Const(b)) => a.to_bits() == b.to_bits(),
            (Node::Var(a), Node::Var(b)) => a == b,
            (Node::Unary(o1, a1), Node::Unary(o2, a2)) => o1 == o2 && a1 == a2,
            (Node::Binary(o1, a1, b1), Node::Binary(o2, a2, b2)) => o1 == o2 && a1 == a2 && b1 == b2,
            (
                Node::Piecewise { lhs: l1, rel: r1, rhs: h1, then: t1, otherwise: e1 },
                Node::Piecewise { lhs: l2, rel: r2, rhs: h2, then: t2, otherwise: e2 },
            ) => l1 == l2 && r1 == r2 && h1 == h2 && t1 == t2 && e1 == e2,
            _ => false,
        }
    }
}

impl Eq for Node {}

impl Hash for Node {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match *self {
            Node::Const(c) => {
                0u8.hash(state);
                c.to_bits().hash(state);
            }
            Node::Var(v) => {
                1u8.hash(state);
                v.hash(state);
            }
            Node::Unary(op, a) => {
                2u8.hash(state);
                op.hash(state);
                a.hash(state);
            }
            Node::Binary(op, a, b) => {
                3u8.hash(state);
                op.hash(state);
                a.hash(state);
                b.hash(state);
            }
            Node::Piecewise { lhs, rel, rhs, then, otherwise } => {
                4u8.hash(state);
                lhs.hash(state);
                rel.hash(state);
                rhs.hash(state);
                then.hash(state);
                otherwise.hash(state);
            }
        }
    }
}

/// Operation selector for the untyped [`ExprGraph::apply`] entry point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    Const(f64),
    Unary(UnaryOp),
    Binary(BinaryOp),
    Piecewise(Relation),
}

impl OpKind {
    pub fn arity(&self) -> usize {
        match self {
            OpKind::Const(_) => 0,
            OpKind::Unary(_) => 1,
            OpKind::Binary(_) => 2,
            OpKind::Piecewise(_) => 4,
        }
    }
}

/// Hash-consed DAG of scalar expressions.
#[derive(Clone, Debug, Default)]
pub struct ExprGraph {
    nodes: Vec<Node>,
    index: HashMap<Node, NodeId>,
    vars: Vec<VarSpec>,
    var_nodes: Vec<NodeId>,
    var_lookup: HashMap<String, VarId>,
    roots: Vec<NodeId>,
}

impl ExprGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn node(&self, id: NodeId) -> Node {
        self.nodes[id.index()]
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.index() < self.nodes.len()
    }

    pub fn vars(&self) -> &[VarSpec] {
        &self.vars
    }

    pub fn var_spec(&self, var: VarId) -> &VarSpec {
        &self.vars[var.index()]
    }

    pub fn var_id(&self, name: &str) -> Option<VarId> {
        self.var_lookup.get(name).copied()
    }

    /// The `Var` node of a declared variable.
    pub fn var_node(&self, var: VarId) -> NodeId {
        self.var_nodes[var.index()]
    }

    pub fn roots(&self) -> &[NodeId] {
        &self.roots
    }

    pub fn add_root(&mut self, root: NodeId) {
        assert!(self.contains(root), "root {root} is not in this graph");
        self.roots.push(root);
    }

    pub fn set_roots(&mut self, roots: Vec<NodeId>) {
        assert!(roots.iter().all(|r| self.contains(*r)));
        self.roots = roots;
    }

    /// Declares a variable and returns its node. Redeclaring an identical
    /// spec is a no-op; conflicting redeclaration is an error.
    pub fn declare(&mut self, spec: VarSpec) -> Result<NodeId, ExprError> {
        spec.validate()?;
        if let Some(&id) = self.var_lookup.get(&spec.name) {
            if self.vars[id.index()] == spec {
                return Ok(self.var_nodes[id.index()]);
            }
            return Err(ExprError::DuplicateVariable(spec.name));
        }
        let id = VarId(self.vars.len() as u32);
        self.var_lookup.insert(spec.name.clone(), id);
        self.vars.push(spec);
        let node = self.intern(Node::Var(id));
        self.var_nodes.push(node);
        Ok(node)
    }

    /// Node for `name`, implicitly declaring an unbounded feature.
    pub fn var(&mut self, name: &str) -> Result<NodeId, ExprError> {
        match self.var_lookup.get(name) {
            Some(&id) => Ok(self.var_nodes[id.index()]),
            None => self.declare(VarSpec::feature(name)),
        }
    }

    /// Replaces the bounds of an existing variable.
    pub fn set_bounds(&mut self, var: VarId, bounds: Option<Interval>) -> Result<(), ExprError> {
        let mut spec = self.vars[var.index()].clone();
        spec.bounds = bounds;
        spec.validate()?;
        self.vars[var.index()] = spec;
        Ok(())
    }

    fn intern(&mut self, node: Node) -> NodeId {
        if let Some(&id) = self.index.get(&node) {
            return id;
        }
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(node);
        self.index.insert(node, id);
        id
    }

    fn check(&self, id: NodeId) -> Result<(), ExprError> {
        if self.contains(id) {
            Ok(())
        } else {
            Err(ExprError::UnknownNode(id))
        }
    }

    pub fn constant(&mut self, value: f64) -> Result<NodeId, ExprError> {
        if !value.is_finite() {
            return Err(ExprError::NonFiniteConstant(value));
        }
        Ok(self.intern(Node::Const(value)))
    }

    pub fn zero(&mut self) -> NodeId {
        self.intern(Node::Const(0.0))
    }

    pub fn one(&mut self) -> NodeId {
        self.intern(Node::Const(1.0))
    }

    pub fn unary(&mut self, op: UnaryOp, arg: NodeId) -> Result<NodeId, ExprError> {
        self.check(arg)?;
        if let Some(c) = self.node(arg).as_const() {
            match op.apply(c) {
                Ok(v) if v.is_finite() => return Ok(self.intern(Node::Const(v))),
                Ok(_) => {}
                Err(e) => return Err(ExprError::ConstantDomain(e)),
            }
        }
        Ok(self.intern(Node::Unary(op, arg)))
    }

    pub fn binary(&mut self, op: BinaryOp, a: NodeId, b: NodeId) -> Result<NodeId, ExprError> {
        self.check(a)?;
        self.check(b)?;
        let (ca, cb) = (self.node(a).as_const(), self.node(b).as_const());
        if op == BinaryOp::Div && cb == Some(0.0) {
            return Err(ExprError::DivisionByZeroConstant);
        }
        if let (Some(x), Some(y)) = (ca, cb) {
            match op.apply(x, y) {
                Ok(v) if v.is_finite() => return Ok(self.intern(Node::Const(v))),
                Ok(_) => {}
                Err(e) => return Err(ExprError::ConstantDomain(e)),
            }
        }
        Ok(self.intern(Node::Binary(op, a, b)))
    }

    /// Piecewise node; a guard with constant operands folds to the live branch.
    pub fn piecewise(
        &mut self,
        lhs: NodeId,
        rel: Relation,
        rhs: NodeId,
        then: NodeId,
        otherwise: NodeId,
    ) -> Result<NodeId, ExprError> {
        for id in [lhs, rhs, then, otherwise] {
            self.check(id)?;
        }
        if let (Some(l), Some(r)) = (self.node(lhs).as_const(), self.node(rhs).as_const()) {
            return Ok(if rel.holds(l, r) { then } else { otherwise });
        }
        Ok(self.intern(Node::Piecewise { lhs, rel, rhs, then, otherwise }))
    }

    /// Untyped constructor with arity checking. Piecewise children are
    /// `[lhs, rhs, then, otherwise]`.
    pub fn apply(&mut self, op: OpKind, children: &[NodeId]) -> Result<NodeId, ExprError> {
        if children.len() != op.arity() {
            return Err(ExprError::Arity { op: format!("{op:?}"), expected: op.arity(), got: children.len() });
        }
        match op {
            OpKind::Const(c) => self.constant(c),
            OpKind::Unary(u) => self.unary(u, children[0]),
            OpKind::Binary(b) => self.binary(b, children[0], children[1]),
            OpKind::Piecewise(rel) => self.piecewise(children[0], rel, children[1], children[2], children[3]),
        }
    }

    /// Rebuilds `node` with new children through the interning constructors.
    /// Folding that would fail with a domain error leaves the node unfolded,
    /// so the error surfaces at evaluation time instead.
    pub(crate) fn rebuild(&mut self, node: Node, map: impl Fn(NodeId) -> NodeId) -> Result<NodeId, ExprError> {
        let mapped = match node {
            Node::Const(_) | Node::Var(_) => node,
            Node::Unary(op, a) => Node::Unary(op, map(a)),
            Node::Binary(op, a, b) => Node::Binary(op, map(a), map(b)),
            Node::Piecewise { lhs, rel, rhs, then, otherwise } => {
                Node::Piecewise { lhs: map(lhs), rel, rhs: map(rhs), then: map(then), otherwise: map(otherwise) }
            }
        };
        let built = match mapped {
            Node::Const(c) => self.constant(c),
            Node::Var(v) => Ok(self.var_nodes[v.index()]),
            Node::Unary(op, a) => self.unary(op, a),
            Node::Binary(op, a, b) => self.binary(op, a, b),
            Node::Piecewise { lhs, rel, rhs, then, otherwise } => self.piecewise(lhs, rel, rhs, then, otherwise),
        };
        match built {
            Err(ExprError::ConstantDomain(_) | ExprError::DivisionByZeroConstant) => {
                for c in mapped.children() {
                    self.check(c)?;
                }
                Ok(self.intern(mapped))
            }
            other => other,
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ExprError> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ExprError> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ExprError> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ExprError> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn pow(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, ExprError> {
        self.binary(BinaryOp::Pow, a, b)
    }

    pub fn powi(&mut self, a: NodeId, n: i32) -> Result<NodeId, ExprError> {
        let e = self.constant(n as f64)?;
        self.pow(a, e)
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId, ExprError> {
        self.unary(UnaryOp::Neg, a)
    }

    /// `max(x, 0)` as `piecewise(x <= 0, 0, x)`.
    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, ExprError> {
        let zero = self.zero();
        self.piecewise(x, Relation::Le, zero, zero, x)
    }

    /// Nodes reachable from `roots`, children before parents, in ascending
    /// arena order.
    pub fn topo_order_multi(&self, roots: &[NodeId]) -> Vec<NodeId> {
        let Some(max) = roots.iter().map(|r| r.index()).max() else {
            return Vec::new();
        };
        let mut seen = vec![false; max + 1];
        let mut stack: Vec<NodeId> = roots.to_vec();
        while let Some(n) = stack.pop() {
            if std::mem::replace(&mut seen[n.index()], true) {
                continue;
            }
            stack.extend(self.node(n).children().filter(|c| !seen[c.index()]));
        }
        seen.iter().enumerate().filter(|(_, s)| **s).map(|(i, _)| NodeId(i as u32)).collect()
    }

    pub fn topo_order(&self, root: NodeId) -> Vec<NodeId> {
        self.topo_order_multi(&[root])
    }

    /// Variables appearing under `root`, in declaration order.
    pub fn support(&self, root: NodeId) -> Vec<VarId> {
        let mut vars: Vec<VarId> = self
            .topo_order(root)
            .into_iter()
            .filter_map(|n| match self.node(n) {
                Node::Var(v) => Some(v),
                _ => None,
            })
            .collect();
        vars.sort();
        vars
    }

    /// Parent lists for every node reachable from `roots`, derived from the
    /// child-ward storage.
    pub fn parents(&self, roots: &[NodeId]) -> HashMap<NodeId, Vec<NodeId>> {
        let mut parents: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        for n in self.topo_order_multi(roots) {
            parents.entry(n).or_default();
            for c in self.node(n).children() {
                let list = parents.entry(c).or_default();
                if list.last() != Some(&n) {
                    list.push(n);
                }
            }
        }
        parents
    }

    /// Number of distinct nodes reachable from `root`.
    pub fn reachable_count(&self, root: NodeId) -> usize {
        self.topo_order(root).len()
    }
}
