//! Symbolic expression DAG.
//!
//! Graphs are append-only arenas of hash-consed nodes: building the same
//! operation over the same children twice returns the same [`NodeId`], and
//! operations over constants fold immediately. Expressions are defined per
//! individual, over scalar abstract inputs declared as [`VarSpec`]s.

mod eval;
mod graph;
mod scalar;

use thiserror::Error;

pub use eval::Bindings;
pub use graph::{is_identifier, ExprGraph, Node, NodeId, OpKind, Role, VarId, VarSpec};
pub use scalar::{integer_exponent, pow, powi_exact, sigmoid, BinaryOp, DomainError, Relation, UnaryOp};

/// Graph construction errors.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("{op} expects {expected} operand(s), got {got}")]
    Arity { op: String, expected: usize, got: usize },
    #[error("division by zero constant")]
    DivisionByZeroConstant,
    #[error("constant folding failed: {0}")]
    ConstantDomain(DomainError),
    #[error("non-finite constant {0}")]
    NonFiniteConstant(f64),
    #[error("invalid variable name {0:?}")]
    InvalidName(String),
    #[error("invalid bounds for variable {0:?}")]
    InvalidBounds(String),
    #[error("variable {0:?} declared twice with different specs")]
    DuplicateVariable(String),
    #[error("unknown variable {0:?}")]
    UnknownVariable(String),
    #[error("node {0} does not belong to this graph")]
    UnknownNode(NodeId),
}

/// Evaluation errors.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable {0:?}")]
    UnboundVariable(String),
    #[error("{kind} at node {node}")]
    Domain { node: NodeId, kind: DomainError },
}
