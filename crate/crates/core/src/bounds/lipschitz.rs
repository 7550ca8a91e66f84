use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::autodiff::{grad, grad_norm};
use crate::expr::{ExprGraph, NodeId, VarId, VarSpec};
use crate::parser::print_expr;

use super::{region_text, BoundsError, InputBox, Interval, IntervalTape};

pub const DEFAULT_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_BUDGET: usize = 100_000;
const DEFAULT_SAMPLES: usize = 256;
/// Closed forms whose printed tree would exceed this many nodes are omitted.
const CLOSED_FORM_LIMIT: u64 = 20_000;

#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzOptions {
    /// Relative gap `(upper - lower) / max(lower, 1)` at which the search stops.
    pub tolerance: f64,
    /// Maximum number of box expansions.
    pub budget: usize,
    /// Number of low-discrepancy multi-start points for the lower bound.
    pub samples: usize,
    /// Render the maximized expression into the report.
    pub closed_form: bool,
}

impl Default for LipschitzOptions {
    fn default() -> Self {
        LipschitzOptions {
            tolerance: DEFAULT_TOLERANCE,
            budget: DEFAULT_BUDGET,
            samples: DEFAULT_SAMPLES,
            closed_form: true,
        }
    }
}

/// Certified bracket on the supremum of a gradient norm over a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub k_upper: f64,
    pub k_lower: f64,
    pub witness: BTreeMap<String, f64>,
    pub iterations: usize,
    pub tolerance: f64,
    pub closed_form: String,
    pub flags: Vec<String>,
}

impl LipschitzReport {
    pub fn budget_exhausted(&self) -> bool {
        self.flags.iter().any(|f| f == "budget_exhausted")
    }

    pub fn relative_gap(&self) -> f64 {
        (self.k_upper - self.k_lower) / self.k_lower.max(1.0)
    }
}

/// Local Lipschitz constant of `root` with respect to `wrt`: the supremum of
/// the symbolic gradient norm over `bounds`.
pub fn lipschitz_constant(
    graph: &mut ExprGraph,
    root: NodeId,
    wrt: &[VarId],
    bounds: &InputBox,
    opts: &LipschitzOptions,
) -> Result<LipschitzReport, BoundsError> {
    let mut bundle = grad(graph, root, wrt)?;
    let norm = grad_norm(graph, &mut bundle)?;
    sup_norm(graph, norm, bounds, opts)
}

struct Cell {
    upper: f64,
    seq: u64,
    boxes: Vec<Interval>,
}

impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Cell {}

impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cell {
    fn cmp(&self, other: &Self) -> Ordering {
        self.upper.total_cmp(&other.upper).then_with(|| other.seq.cmp(&self.seq))
    }
}

fn primes(n: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(n);
    let mut k = 2u64;
    while out.len() < n {
        if out.iter().take_while(|p| *p * *p <= k).all(|p| !k.is_multiple_of(*p)) {
            out.push(k);
        }
        k += 1;
    }
    out
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

fn tree_size(graph: &ExprGraph, root: NodeId) -> u64 {
    let mut size = vec![0u64; root.index() + 1];
    for n in graph.topo_order(root) {
        size[n.index()] = graph.node(n).children().fold(1u64, |acc, c| acc.saturating_add(size[c.index()]));
    }
    size[root.index()]
}

fn centre(boxes: &[Interval]) -> Vec<f64> {
    boxes.iter().map(|b| b.mid()).collect()
}

/// Maximizes `expr` over `bounds` by interval branch and bound.
///
/// The upper bound is the largest interval enclosure among the remaining
/// boxes; the lower bound is the best value seen at box centres and at a
/// fixed Halton sample, so `k_lower` is always attained at `witness`.
pub fn sup_norm(
    graph: &mut ExprGraph,
    expr: NodeId,
    bounds: &InputBox,
    opts: &LipschitzOptions,
) -> Result<LipschitzReport, BoundsError> {
    if !(opts.tolerance > 0.0 && opts.tolerance.is_finite()) {
        return Err(BoundsError::InvalidTolerance(opts.tolerance));
    }
    if opts.budget == 0 {
        return Err(BoundsError::InvalidBudget);
    }
    let dims = graph.support(expr);
    let initial = bounds.intervals_for(graph, &dims)?;
    let mut flags = Vec::new();
    let closed_form = if !opts.closed_form {
        String::new()
    } else if tree_size(graph, expr) <= CLOSED_FORM_LIMIT {
        print_expr(graph, expr)
    } else {
        flags.push("closed_form_omitted".to_string());
        String::new()
    };

    let value_tape = IntervalTape::new(graph, &[expr], &dims).expect("support covers tape");
    let slope_tape = grad(graph, expr, &dims)
        .ok()
        .map(|b| IntervalTape::new(graph, &b.partials, &dims).expect("support covers tape"));

    let mut iscratch = Vec::new();
    let mut pscratch = Vec::new();
    let upper_of = |boxes: &[Interval], scratch: &mut Vec<_>| value_tape.eval_box(boxes, scratch)[0];

    let root_upper = match upper_of(&initial, &mut iscratch) {
        Ok(iv) => iv.hi,
        Err(fault) => return Err(BoundsError::NotLipschitz { fault, region: region_text(graph, &dims, &initial) }),
    };

    let mut best = f64::NEG_INFINITY;
    let mut witness: Vec<f64> = centre(&initial);
    let consider = |point: Vec<f64>, best: &mut f64, witness: &mut Vec<f64>, scratch: &mut Vec<_>| {
        if let Ok(v) = value_tape.eval_point(&point, scratch)[0] {
            if v.is_finite() && v > *best {
                *best = v;
                *witness = point;
            }
        }
    };
    consider(centre(&initial), &mut best, &mut witness, &mut pscratch);
    let bases = primes(dims.len());
    for i in 1..=opts.samples as u64 {
        let point = initial.iter().zip(&bases).map(|(b, &p)| b.lo + radical_inverse(i, p) * b.width()).collect();
        consider(point, &mut best, &mut witness, &mut pscratch);
    }

    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    heap.push(Cell { upper: root_upper, seq, boxes: initial.clone() });
    let mut settled = f64::NEG_INFINITY;
    let mut iterations = 0usize;
    while let Some(top) = heap.peek() {
        let upper = top.upper.max(settled);
        if best.is_finite() && (upper - best) / best.max(1.0) <= opts.tolerance {
            break;
        }
        if iterations >= opts.budget {
            flags.push("budget_exhausted".to_string());
            break;
        }
        let cell = heap.pop().expect("peeked");
        iterations += 1;
        if cell.upper <= best {
            settled = settled.max(cell.upper);
            continue;
        }
        let widths: Vec<f64> = cell.boxes.iter().map(|b| b.width()).collect();
        if widths.iter().all(|w| *w == 0.0) {
            settled = settled.max(cell.upper);
            continue;
        }
        let mut scores = widths.clone();
        if let Some(tape) = &slope_tape {
            let slopes = tape.eval_box(&cell.boxes, &mut iscratch);
            let weighted: Option<Vec<f64>> = slopes
                .iter()
                .zip(&widths)
                .map(|(s, w)| s.ok().map(|iv| w * iv.magnitude()).filter(|x| x.is_finite()))
                .collect();
            if let Some(w) = weighted.filter(|w| w.iter().any(|x| *x > 0.0)) {
                scores = w;
            }
        }
        let mut dim = 0;
        for (i, s) in scores.iter().enumerate() {
            if *s > scores[dim] || widths[dim] == 0.0 {
                dim = i;
            }
        }
        let (left, right) = cell.boxes[dim].split();
        for half in [left, right] {
            let mut boxes = cell.boxes.clone();
            boxes[dim] = half;
            let upper = match upper_of(&boxes, &mut iscratch) {
                Ok(iv) => iv.hi,
                Err(fault) => {
                    return Err(BoundsError::NotLipschitz { fault, region: region_text(graph, &dims, &boxes) })
                }
            };
            consider(centre(&boxes), &mut best, &mut witness, &mut pscratch);
            if upper > best {
                seq += 1;
                heap.push(Cell { upper, seq, boxes });
            } else {
                settled = settled.max(upper);
            }
        }
    }

    let mut k_upper = heap.peek().map_or(settled, |c| c.upper.max(settled));
    if !best.is_finite() {
        flags.push("no_feasible_point".to_string());
        best = 0.0;
    }
    k_upper = k_upper.max(best);
    if !k_upper.is_finite() {
        flags.push("unbounded_enclosure".to_string());
    }
    let witness = dims.iter().zip(&witness).map(|(v, x)| (graph.var_spec(*v).name.clone(), *x)).collect();
    Ok(LipschitzReport { k_upper, k_lower: best, witness, iterations, tolerance: opts.tolerance, closed_form, flags })
}

/// Radii for [`weight_box_from_norm`].
#[derive(Clone, Debug, PartialEq)]
pub enum Radii {
    Uniform(f64),
    PerVar(Vec<f64>),
}

/// The box `[-r, r]` for each weight.
pub fn weight_box_from_norm(weights: &[VarSpec], radii: &Radii) -> Result<InputBox, BoundsError> {
    let rs: Vec<f64> = match radii {
        Radii::Uniform(r) => vec![*r; weights.len()],
        Radii::PerVar(rs) => {
            if rs.len() != weights.len() {
                return Err(BoundsError::RadiusCount { expected: weights.len(), got: rs.len() });
            }
            rs.clone()
        }
    };
    let mut out = InputBox::new();
    for (w, r) in weights.iter().zip(rs) {
        if !(r > 0.0 && r.is_finite()) {
            return Err(BoundsError::InvalidRadius(r));
        }
        out.insert(w.name.clone(), Interval::new(-r, r).expect("finite radius"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Role;
    use crate::parser::parse;

    fn iv(lo: f64, hi: f64) -> Interval {
        Interval::new(lo, hi).unwrap()
    }

    fn analyze(src: &str, bounds: InputBox) -> Result<LipschitzReport, BoundsError> {
        let (mut g, root) = parse(src).unwrap();
        let wrt = g.support(root);
        lipschitz_constant(&mut g, root, &wrt, &bounds, &LipschitzOptions::default())
    }

    #[test]
    fn linear_is_exact() {
        let r = analyze("3*x", InputBox::new().with("x", iv(-5.0, 2.0))).unwrap();
        assert_eq!((r.k_upper, r.k_lower), (3.0, 3.0));
    }

    #[test]
    fn relu_has_unit_constant() {
        let r = analyze("relu(x)", InputBox::new().with("x", iv(-1.0, 1.0))).unwrap();
        assert_eq!(r.k_lower, 1.0);
        assert!(r.k_upper >= 1.0 && r.k_upper <= 1.0 + 1e-9);
    }

    #[test]
    fn quadratic_on_box() {
        let r = analyze("x^2 + y^2", InputBox::new().with("x", iv(-1.0, 3.0)).with("y", iv(0.5, 2.0))).unwrap();
        let exact = (36.0f64 + 16.0).sqrt();
        assert!(r.k_lower <= exact && exact <= r.k_upper, "{r:?}");
        assert!(r.relative_gap() <= 1e-3);
    }

    #[test]
    fn bmi_constant() {
        let b = InputBox::new().with("a", iv(20.0, 80.0)).with("w", iv(40.0, 150.0)).with("h", iv(1.4, 2.1));
        let r = analyze("a*w/h^2", b).unwrap();
        let (a, w, h) = (80.0f64, 150.0f64, 1.4f64);
        let exact = (w * w + a * a + 4.0 * a * a * w * w / (h * h)).sqrt() / (h * h);
        assert!(r.k_lower <= exact * (1.0 + 1e-12) && exact <= r.k_upper, "{r:?}");
        assert!(r.relative_gap() <= 1e-3, "{r:?}");
        assert!(!r.budget_exhausted());
        assert!((r.witness["a"] - 80.0).abs() < 1.0 && (r.witness["h"] - 1.4).abs() < 0.05);
    }

    #[test]
    fn singular_box_is_rejected() {
        let b = InputBox::new().with("a", iv(20.0, 80.0)).with("w", iv(40.0, 150.0)).with("h", iv(0.0, 2.0));
        let err = analyze("a*w/h^2", b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("not locally Lipschitz"), "{msg}");
        assert!(msg.contains("division by interval containing 0"), "{msg}");
    }

    #[test]
    fn budget_exhaustion_is_flagged() {
        let (mut g, root) = parse("tanh(5*x)*tanh(7*y)").unwrap();
        let wrt = g.support(root);
        let b = InputBox::new().with("x", iv(-3.0, 3.0)).with("y", iv(-3.0, 3.0));
        let opts = LipschitzOptions { budget: 3, ..Default::default() };
        let r = lipschitz_constant(&mut g, root, &wrt, &b, &opts).unwrap();
        assert!(r.budget_exhausted());
        assert!(r.k_lower <= r.k_upper);
    }

    #[test]
    fn deterministic() {
        let b = InputBox::new().with("x", iv(-2.0, 1.0)).with("y", iv(0.1, 3.0));
        let r1 = analyze("sigmoid(x*y) + log(y)*x", b.clone()).unwrap();
        let r2 = analyze("sigmoid(x*y) + log(y)*x", b).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn weight_boxes() {
        let ws: Vec<VarSpec> = ["w1", "w2", "w3"].iter().map(|n| VarSpec::new(*n, Role::Weight)).collect();
        let b = weight_box_from_norm(&ws, &Radii::Uniform(0.5)).unwrap();
        assert_eq!(b.len(), 3);
        assert!(b.iter().all(|(_, i)| i == iv(-0.5, 0.5)));
        let b = weight_box_from_norm(&ws[..2], &Radii::PerVar(vec![1.0, 2.0])).unwrap();
        assert_eq!(b.get("w2"), Some(iv(-2.0, 2.0)));
        assert!(weight_box_from_norm(&ws, &Radii::Uniform(0.0)).is_err());
        assert!(weight_box_from_norm(&ws, &Radii::PerVar(vec![1.0])).is_err());
    }
}
