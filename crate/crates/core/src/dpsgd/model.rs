use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::expr::{ExprGraph, NodeId, Role, UnaryOp, VarId, VarSpec};

use super::DpsgdError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
    /// No hidden activation; only valid without hidden layers.
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `(z - y)^2`
    Mse,
    /// `log(1 + exp(z)) - y*z` for labels in {0, 1}
    Logistic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase", tag = "scheme")]
pub enum Init {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)); zero biases.
    #[default]
    Xavier,
    /// Uniform in ±scale; zero biases.
    Uniform { scale: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub layers: Vec<usize>,
    pub activation: Activation,
    pub loss: LossKind,
    #[serde(default)]
    pub init: Init,
    #[serde(default)]
    pub init_seed: u64,
}

impl ModelSpec {
    pub fn new(layers: &[usize], activation: Activation, loss: LossKind) -> Self {
        ModelSpec { layers: layers.to_vec(), activation, loss, init: Init::Xavier, init_seed: 0 }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn validate(&self) -> Result<(), DpsgdError> {
        let bad = |m: String| Err(DpsgdError::Model(m));
        if self.layers.len() < 2 {
            return bad("a model needs at least an input and an output layer".into());
        }
        if self.layers.contains(&0) {
            return bad("layer sizes must be positive".into());
        }
        if *self.layers.last().expect("non-empty") != 1 {
            return bad("the output layer must have size 1".into());
        }
        if self.activation == Activation::Linear && self.layers.len() > 2 {
            return bad("linear activation is only supported without hidden layers".into());
        }
        if let Init::Uniform { scale } = self.init {
            if !(scale.is_finite() && scale > 0.0) {
                return bad(format!("init scale must be positive, got {scale}"));
            }
        }
        Ok(())
    }
}

/// The per-sample loss of an MLP as an expression over features `x1..xd`,
/// the target `y` and one variable per parameter.
#[derive(Clone, Debug)]
pub struct LossModel {
    pub spec: ModelSpec,
    pub graph: ExprGraph,
    pub loss: NodeId,
    pub output: NodeId,
    pub features: Vec<VarId>,
    pub target: VarId,
    pub params: Vec<VarId>,
}

impl LossModel {
    pub fn param_names(&self) -> Vec<String> {
        self.params.iter().map(|p| self.graph.var_spec(*p).name.clone()).collect()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|p| self.graph.var_spec(*p).name.clone()).collect()
    }

    pub fn target_name(&self) -> &str {
        &self.graph.var_spec(self.target).name
    }

    /// Initial parameters in `params` order.
    pub fn init_weights(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.init_seed);
        let mut out = Vec::with_capacity(self.params.len());
        for w in self.spec.layers.windows(2) {
            let scale = match self.spec.init {
                Init::Xavier => (6.0 / (w[0] + w[1]) as f64).sqrt(),
                Init::Uniform { scale } => scale,
            };
            for _ in 0..w[0] * w[1] {
                out.push(rng.gen_range(-scale..=scale));
            }
            out.extend(std::iter::repeat_n(0.0, w[1]));
        }
        out
    }
}

pub fn build_loss_graph(spec: &ModelSpec) -> Result<LossModel, DpsgdError> {
    spec.validate()?;
    let mut g = ExprGraph::new();
    let d = spec.layers[0];
    let mut features = Vec::with_capacity(d);
    let mut acts = Vec::with_capacity(d);
    for i in 1..=d {
        acts.push(g.declare(VarSpec::new(format!("x{i}"), Role::Feature))?);
        features.push(g.var_id(&format!("x{i}")).expect("declared"));
    }
    let y = g.declare(VarSpec::new("y", Role::Target))?;
    let mut params = Vec::with_capacity(spec.parameter_count());
    let last = spec.layers.len() - 2;
    for (l, w) in spec.layers.windows(2).enumerate() {
        let mut weights = vec![Vec::with_capacity(w[1]); w[0]];
        for (i, row) in weights.iter_mut().enumerate() {
            for j in 0..w[1] {
                let name = format!("w_{}_{}_{}", l + 1, i + 1, j + 1);
                row.push(g.declare(VarSpec::new(&name, Role::Weight))?);
                params.push(g.var_id(&name).expect("declared"));
            }
        }
        let mut next = Vec::with_capacity(w[1]);
        for j in 0..w[1] {
            let name = format!("b_{}_{}", l + 1, j + 1);
            let b = g.declare(VarSpec::new(&name, Role::Bias))?;
            params.push(g.var_id(&name).expect("declared"));
            let mut z = None;
            for (row, a) in weights.iter().zip(&acts) {
                let t = g.mul(row[j], *a)?;
                z = Some(match z {
                    None => t,
                    Some(s) => g.add(s, t)?,
                });
            }
            let z = g.add(z.expect("non-empty layer"), b)?;
            next.push(if l == last {
                z
            } else {
                match spec.activation {
                    Activation::Tanh => g.unary(UnaryOp::Tanh, z)?,
                    Activation::Sigmoid => g.unary(UnaryOp::Sigmoid, z)?,
                    Activation::Relu => g.relu(z)?,
                    Activation::Linear => z,
                }
            });
        }
        acts = next;
    }
    let output = acts[0];
    let loss = match spec.loss {
        LossKind::Mse => {
            let r = g.sub(output, y)?;
            g.powi(r, 2)?
        }
        LossKind::Logistic => {
            let e = g.unary(UnaryOp::Exp, output)?;
            let one = g.one();
            let s = g.add(one, e)?;
            let sp = g.unary(UnaryOp::Log, s)?;
            let yz = g.mul(y, output)?;
            g.sub(sp, yz)?
        }
    };
    g.add_root(loss);
    let target = g.var_id("y").expect("declared");
    Ok(LossModel { spec: spec.clone(), graph: g, loss, output, features, target, params })
}
