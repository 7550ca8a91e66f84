//! Hybrid symbolic and reverse-mode differentiation engine with interval
//! bounds, kernel compilation and differentially private training.

pub mod autodiff;
pub mod bounds;
pub mod compile;
pub mod dp;
pub mod dpsgd;
pub mod expr;
pub mod parser;
pub mod randexpr;

pub use autodiff::{grad, grad_by_name, grad_norm, per_sample_grads, AdError, GradientBundle};
pub use bounds::{lipschitz_constant, propagate_bounds, InputBox, Interval, LipschitzOptions, LipschitzReport};
pub use compile::{
    lower, lower_labeled, partial_evaluate, simplify, CompileOptions, KernelProgram, Matrix, Mode, Pass,
};
pub use expr::{EvalError, ExprError, ExprGraph, Node, NodeId, Role, VarId, VarSpec};
pub use parser::{parse, print_expr, ParseError};
