//! Seeded random expression generation for differential and property tests.

use rand::Rng;

use crate::expr::{BinaryOp, ExprGraph, NodeId, Relation, UnaryOp};

/// Which operators the generator may use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    /// Differentiable everywhere and defined on all of R^n: compositions
    /// of +, -, *, tanh, sigmoid, small integer powers and guarded
    /// versions of exp, log, sqrt and division.
    Smooth,
    /// Every operator including piecewise, min, max, abs and unguarded
    /// log, sqrt, division and real powers.
    Full,
}

#[derive(Clone, Debug)]
pub struct RandomExpr {
    pub profile: Profile,
    pub max_depth: usize,
    /// Probability that a leaf is a constant rather than a variable.
    pub constant_rate: f64,
}

impl RandomExpr {
    pub fn new(profile: Profile, max_depth: usize) -> Self {
        RandomExpr { profile, max_depth, constant_rate: 0.25 }
    }

    /// Builds a fresh graph over variables `x0..x{n-1}`.
    pub fn graph<R: Rng + ?Sized>(&self, rng: &mut R, nvars: usize) -> (ExprGraph, NodeId) {
        let mut g = ExprGraph::new();
        let vars: Vec<NodeId> = (0..nvars).map(|i| g.var(&format!("x{i}")).expect("valid name")).collect();
        let root = self.build(&mut g, rng, &vars);
        g.add_root(root);
        (g, root)
    }

    /// Adds a random expression over `vars` to `g`.
    pub fn build<R: Rng + ?Sized>(&self, g: &mut ExprGraph, rng: &mut R, vars: &[NodeId]) -> NodeId {
        let depth = rng.gen_range(1..=self.max_depth.max(1));
        self.node(g, rng, vars, depth)
    }

    fn leaf<R: Rng + ?Sized>(&self, g: &mut ExprGraph, rng: &mut R, vars: &[NodeId]) -> NodeId {
        if vars.is_empty() || rng.gen_bool(self.constant_rate) {
            let c = (rng.gen_range(-3.0f64..3.0) * 8.0).round() / 8.0;
            g.constant(c).expect("finite constant")
        } else {
            vars[rng.gen_range(0..vars.len())]
        }
    }

    fn node<R: Rng + ?Sized>(&self, g: &mut ExprGraph, rng: &mut R, vars: &[NodeId], depth: usize) -> NodeId {
        if depth == 0 || rng.gen_bool(0.2) {
            return self.leaf(g, rng, vars);
        }
        let built = match self.profile {
            Profile::Smooth => self.smooth(g, rng, vars, depth),
            Profile::Full => self.full(g, rng, vars, depth),
        };
        built.unwrap_or_else(|| self.leaf(g, rng, vars))
    }

    fn smooth<R: Rng + ?Sized>(&self, g: &mut ExprGraph, rng: &mut R, vars: &[NodeId], depth: usize) -> Option<NodeId> {
        let a = self.node(g, rng, vars, depth - 1);
        let one = g.one();
        let r = match rng.gen_range(0..12) {
            0 => {
                let b = self.node(g, rng, vars, depth - 1);
                g.add(a, b)
            }
            1 => {
                let b = self.node(g, rng, vars, depth - 1);
                g.sub(a, b)
            }
            2 | 3 => {
                let b = self.node(g, rng, vars, depth - 1);
                g.mul(a, b)
            }
            4 => {
                // a / (1 + b^2)
                let b = self.node(g, rng, vars, depth - 1);
                let b2 = g.powi(b, 2).ok()?;
                let d = g.add(one, b2).ok()?;
                g.div(a, d)
            }
            5 => g.unary(UnaryOp::Tanh, a),
            6 => g.unary(UnaryOp::Sigmoid, a),
            7 => {
                let t = g.unary(UnaryOp::Tanh, a).ok()?;
                g.unary(UnaryOp::Exp, t)
            }
            8 => {
                let a2 = g.powi(a, 2).ok()?;
                let s = g.add(one, a2).ok()?;
                g.unary(UnaryOp::Log, s)
            }
            9 => {
                let a2 = g.powi(a, 2).ok()?;
                let s = g.add(one, a2).ok()?;
                g.unary(UnaryOp::Sqrt, s)
            }
            10 => g.powi(a, rng.gen_range(2..=3)),
            _ => g.neg(a),
        };
        r.ok()
    }

    fn full<R: Rng + ?Sized>(&self, g: &mut ExprGraph, rng: &mut R, vars: &[NodeId], depth: usize) -> Option<NodeId> {
        let a = self.node(g, rng, vars, depth - 1);
        let r = match rng.gen_range(0..10) {
            0..=3 => {
                let b = self.node(g, rng, vars, depth - 1);
                let op = BinaryOp::ALL[rng.gen_range(0..BinaryOp::ALL.len())];
                g.binary(op, a, b)
            }
            4..=6 => g.unary(UnaryOp::ALL[rng.gen_range(0..UnaryOp::ALL.len())], a),
            7 => g.relu(a),
            8 => g.powi(a, rng.gen_range(-2..=3)),
            _ => {
                let b = self.node(g, rng, vars, depth - 1);
                let t = self.node(g, rng, vars, depth - 1);
                let o = self.node(g, rng, vars, depth - 1);
                let rel = if rng.gen_bool(0.5) { Relation::Lt } else { Relation::Le };
                g.piecewise(a, rel, b, t, o)
            }
        };
        r.ok()
    }
}
