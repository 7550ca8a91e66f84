//! Interval bound propagation and certified local Lipschitz constants.

mod interval;
mod lipschitz;
mod tape;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AdError;
use crate::expr::{DomainError, ExprError, ExprGraph, NodeId, VarId, VarSpec};

pub use interval::Interval;
pub use lipschitz::{
    lipschitz_constant, sup_norm, weight_box_from_norm, LipschitzOptions, LipschitzReport, Radii, DEFAULT_BUDGET,
    DEFAULT_TOLERANCE,
};
pub use tape::{Fault, IntervalTape};

/// Per-variable bounds keyed by name, kept in insertion order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    entries: Vec<(String, Interval)>,
}

impl InputBox {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces the bounds of `name`.
    pub fn insert(&mut self, name: impl Into<String>, bounds: Interval) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(e) => e.1 = bounds,
            None => self.entries.push((name, bounds)),
        }
    }

    pub fn with(mut self, name: impl Into<String>, bounds: Interval) -> Self {
        self.insert(name, bounds);
        self
    }

    pub fn get(&self, name: &str) -> Option<Interval> {
        self.entries.iter().find(|(n, _)| n == name).map(|e| e.1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Interval)> {
        self.entries.iter().map(|(n, b)| (n.as_str(), *b))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Bounds of every declared variable that has them.
    pub fn from_declarations(decls: &[VarSpec]) -> Self {
        let mut b = InputBox::new();
        for d in decls {
            if let Some(iv) = d.bounds {
                b.insert(d.name.clone(), iv);
            }
        }
        b
    }

    pub fn from_graph(graph: &ExprGraph) -> Self {
        Self::from_declarations(graph.vars())
    }

    /// Merges `other` into `self`, `other` winning on conflicts.
    pub fn extend(&mut self, other: &InputBox) {
        for (n, b) in other.iter() {
            self.insert(n, b);
        }
    }

    pub fn contains_point(&self, name: &str, x: f64) -> Option<bool> {
        self.get(name).map(|b| b.contains(x))
    }

    /// Intervals for `dims`, or the names of the unbounded ones.
    pub fn intervals_for(&self, graph: &ExprGraph, dims: &[VarId]) -> Result<Vec<Interval>, BoundsError> {
        let mut out = Vec::with_capacity(dims.len());
        let mut missing = Vec::new();
        for &v in dims {
            let name = &graph.var_spec(v).name;
            match self.get(name) {
                Some(b) => out.push(b),
                None => missing.push(name.clone()),
            }
        }
        if missing.is_empty() {
            Ok(out)
        } else {
            Err(BoundsError::MissingBounds(missing))
        }
    }
}

impl fmt::Display for InputBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (n, b)) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{n} in {b}")?;
        }
        Ok(())
    }
}

/// How a domain violation reads when it happens over a whole interval.
pub fn interval_fault_text(kind: DomainError) -> &'static str {
    match kind {
        DomainError::DivisionByZero => "division by interval containing 0",
        DomainError::LogOfNonPositive => "logarithm of interval with non-positive part",
        DomainError::SqrtOfNegative => "square root of interval with negative part",
        DomainError::NegativeBase => "power of interval with negative base",
    }
}

fn describe_fault(fault: &Fault) -> String {
    format!("{} at node {}", interval_fault_text(fault.kind), fault.node)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundsError {
    #[error("missing bounds for variable(s): {}", .0.join(", "))]
    MissingBounds(Vec<String>),
    #[error("{} on region {region}", describe_fault(.fault))]
    Domain { fault: Fault, region: String },
    #[error("not locally Lipschitz on box: {} on region {region}", describe_fault(.fault))]
    NotLipschitz { fault: Fault, region: String },
    #[error("tolerance must be positive and finite, got {0}")]
    InvalidTolerance(f64),
    #[error("budget must be at least 1")]
    InvalidBudget,
    #[error("radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("expected {expected} radii, got {got}")]
    RadiusCount { expected: usize, got: usize },
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

pub(crate) fn region_text(graph: &ExprGraph, dims: &[VarId], boxes: &[Interval]) -> String {
    if dims.is_empty() {
        return "(no variables)".into();
    }
    dims.iter().zip(boxes).map(|(v, b)| format!("{} in {b}", graph.var_spec(*v).name)).collect::<Vec<_>>().join(", ")
}

/// Sound enclosure of `root` over `bounds`: every assignment inside the box
/// evaluates to a value inside the returned interval. The result may have
/// infinite endpoints when an operation overflows.
pub fn propagate_bounds(graph: &ExprGraph, root: NodeId, bounds: &InputBox) -> Result<Interval, BoundsError> {
    let dims = graph.support(root);
    let boxes = bounds.intervals_for(graph, &dims)?;
    let tape = IntervalTape::new(graph, &[root], &dims).expect("support covers tape");
    let mut scratch = Vec::new();
    tape.eval_box(&boxes, &mut scratch)[0]
        .map_err(|fault| BoundsError::Domain { fault, region: region_text(graph, &dims, &boxes) })
}

/// Enclosure of `node` under the bounds declared on the graph's variables,
/// if all of them are bounded and no domain violation occurs.
pub(crate) fn declared_enclosure(graph: &ExprGraph, node: NodeId) -> Option<Interval> {
    propagate_bounds(graph, node, &InputBox::from_graph(graph)).ok()
}
