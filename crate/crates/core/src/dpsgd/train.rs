use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad, grad_norm};
use crate::bounds::{sup_norm, InputBox, Interval, LipschitzOptions};
use crate::compile::{lower, lower_labeled, partial_evaluate, CompileOptions, KernelProgram, Matrix};
use crate::dp::{GaussianMechanism, LedgerExport, Noise, PrivacyLedger};
use crate::expr::{ExprGraph, NodeId};

use super::config::{Sampling, TrainConfig, TrainMode};
use super::data::Dataset;
use super::model::{build_loss_graph, LossKind, LossModel};
use super::DpsgdError;

/// Compiled per-sample kernels. Every kernel takes the graph's variables in
/// declaration order: features, target, then parameters.
#[derive(Clone, Debug)]
pub struct Kernels {
    /// Loss graph extended with the gradient and its norm.
    pub graph: ExprGraph,
    pub partials: Vec<NodeId>,
    pub norm: NodeId,
    pub loss_kernel: KernelProgram,
    pub grad_kernel: KernelProgram,
    pub norm_kernel: KernelProgram,
    /// Loss, every partial and the norm in one program.
    pub step_kernel: KernelProgram,
    pub output_kernel: KernelProgram,
}

impl Kernels {
    /// Instructions of the joint gradient and norm program.
    pub fn joint_instructions(&self) -> usize {
        let mut roots = self.partials.clone();
        roots.push(self.norm);
        lower(&self.graph, &roots, &CompileOptions::aot()).len()
    }

    /// Instructions of every partial and the norm lowered one by one
    /// without optimization.
    pub fn separate_naive_instructions(&self) -> usize {
        self.partials
            .iter()
            .chain(std::iter::once(&self.norm))
            .map(|r| lower(&self.graph, &[*r], &CompileOptions::unoptimized()).len())
            .sum()
    }
}

/// Differentiates the loss with respect to every parameter and compiles
/// the loss, gradient, norm and prediction kernels. Needs no data.
pub fn precompute_kernels(model: &LossModel) -> Result<Kernels, DpsgdError> {
    let mut graph = model.graph.clone();
    let mut bundle = grad(&mut graph, model.loss, &model.params)?;
    let norm = grad_norm(&mut graph, &mut bundle)?;
    let partials = bundle.partials.clone();
    let names = model.param_names();
    let aot = CompileOptions::aot();
    let grad_roots: Vec<(String, NodeId)> = names.iter().cloned().zip(partials.iter().copied()).collect();
    let mut step_roots = vec![("loss".to_string(), model.loss)];
    step_roots.extend(grad_roots.iter().cloned());
    step_roots.push(("norm".to_string(), norm));
    Ok(Kernels {
        loss_kernel: lower_labeled(&graph, &[("loss".into(), model.loss)], &aot),
        grad_kernel: lower_labeled(&graph, &grad_roots, &aot),
        norm_kernel: lower_labeled(&graph, &[("norm".into(), norm)], &aot),
        step_kernel: lower_labeled(&graph, &step_roots, &aot),
        output_kernel: lower_labeled(&graph, &[("output".into(), model.output)], &aot),
        graph,
        partials,
        norm,
    })
}

/// Indices of one lot, in ascending order.
pub fn sample_lot<R: Rng + ?Sized>(
    n: usize,
    lot: usize,
    sampling: Sampling,
    rng: &mut R,
) -> Result<Vec<usize>, DpsgdError> {
    if lot > n {
        return Err(DpsgdError::LotTooLarge { lot, n });
    }
    if lot == 0 {
        return Err(DpsgdError::Config("lot size must be positive".into()));
    }
    Ok(match sampling {
        Sampling::Poisson => {
            let p = lot as f64 / n as f64;
            (0..n).filter(|_| rng.gen_bool(p)).collect()
        }
        Sampling::Uniform => {
            let mut v = index::sample(rng, n, lot).into_vec();
            v.sort_unstable();
            v
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lot_size: usize,
    /// Mean per-sample loss over the lot.
    pub loss: Option<f64>,
    pub max_norm: Option<f64>,
    pub mean_norm: Option<f64>,
    /// Sensitivity used for this step.
    pub k: f64,
    /// Per-step search stopped on its budget before converging.
    pub k_fallback: bool,
    /// Samples whose gradient was scaled down.
    pub clipped: usize,
    /// Coordinates moved by weight projection.
    pub projected: usize,
    pub noise_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: TrainMode,
    pub steps: usize,
    pub parameters: Vec<String>,
    pub final_weights: Vec<f64>,
    pub k_precomputed: Option<f64>,
    pub k_precomputed_lower: Option<f64>,
    pub k_precomputed_flags: Vec<String>,
    pub train_accuracy: f64,
    pub train_loss: f64,
    pub total_clipped: usize,
    pub max_norm: Option<f64>,
    pub per_step_fallbacks: usize,
    /// Steps on which projection touched more than half the parameters.
    pub bias_warning_steps: usize,
    pub bias_warning: bool,
    /// False when the noise multiplier is zero; nothing is accounted then.
    pub private: bool,
    pub ledger: LedgerExport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
pub enum Record {
    Step(StepRecord),
    Summary(Summary),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub summary: Summary,
    pub ledger: PrivacyLedger,
}

impl TrainReport {
    /// One JSON object per step followed by the summary.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(&Record::Step(s.clone())).expect("record serializes"));
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&Record::Summary(self.summary.clone())).expect("record serializes"));
        out.push('\n');
        out
    }
}

fn rows_for(data: &Dataset, idx: &[usize], theta: &[f64]) -> Matrix {
    let width = data.dim() + 1 + theta.len();
    let mut m = Vec::with_capacity(idx.len() * width);
    for &i in idx {
        m.extend_from_slice(&data.features[i]);
        m.push(data.targets[i]);
        m.extend_from_slice(theta);
    }
    Matrix::new(idx.len(), width, m).expect("consistent width")
}

/// Upper bound on the gradient norm over the data box with the parameters
/// fixed, and whether the search ran out of budget before converging.
fn step_constant(
    kernels: &Kernels,
    names: &[String],
    theta: &[f64],
    data_box: &InputBox,
    opts: &LipschitzOptions,
) -> Result<(f64, bool), DpsgdError> {
    let res =
        partial_evaluate(&kernels.graph, &[kernels.norm], names.iter().map(String::as_str).zip(theta.iter().copied()))?;
    let mut g = res.graph;
    let report = sup_norm(&mut g, res.roots[0], data_box, opts)?;
    Ok((report.k_upper, report.budget_exhausted()))
}

pub fn train(config: &TrainConfig, data: &Dataset) -> Result<TrainReport, DpsgdError> {
    config.validate()?;
    let model = build_loss_graph(&config.model)?;
    let kernels = precompute_kernels(&model)?;
    let names = model.param_names();
    let data_box = config.data_box();
    data.check(&data_box, &model.feature_names(), model.target_name())?;
    if config.lot_size > data.len() {
        return Err(DpsgdError::LotTooLarge { lot: config.lot_size, n: data.len() });
    }

    let radius = config.weight_radius();
    let mut theta = model.init_weights();
    if let Some(r) = radius {
        for w in &mut theta {
            *w = w.clamp(-r, r);
        }
    }

    let mut k_pre = None;
    let mut k_pre_lower = None;
    let mut k_pre_flags = Vec::new();
    if let Some(r) = radius {
        let mut full_box = data_box.clone();
        for n in &names {
            full_box.insert(n.clone(), Interval::new(-r, r).expect("positive radius"));
        }
        let mut g = kernels.graph.clone();
        let report = sup_norm(&mut g, kernels.norm, &full_box, &config.lipschitz_options())?;
        if !report.k_upper.is_finite() {
            return Err(DpsgdError::Config("gradient norm is unbounded on the configured box".into()));
        }
        k_pre = Some(report.k_upper);
        k_pre_lower = Some(report.k_lower);
        k_pre_flags = report.flags;
    }
    let step_opts =
        config.per_step_k.as_ref().map(|s| LipschitzOptions { budget: s.budget, ..config.lipschitz_options() });

    let private = config.noise_multiplier > 0.0;
    let noise = Noise::from_convention(config.noise_multiplier, config.noise_convention);
    let mut ledger = PrivacyLedger::new();
    let mut sampler = ChaCha8Rng::seed_from_u64(config.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
    noise_rng.set_stream(1);

    let p = names.len();
    let mut steps = Vec::with_capacity(config.steps);
    let mut bias_warning_steps = 0;
    let mut fallbacks = 0;
    for t in 0..config.steps {
        let lot = sample_lot(data.len(), config.lot_size, config.sampling, &mut sampler)?;
        let out = kernels.step_kernel.execute_parallel(&rows_for(data, &lot, &theta), config.workers)?;
        let stride = p + 2;
        let norms: Vec<f64> = (0..lot.len()).map(|i| out.data[i * stride + p + 1]).collect();

        let (k, k_fallback) = match config.mode {
            TrainMode::PrecomputedK => (k_pre.expect("computed for this mode"), false),
            TrainMode::PerStepK => {
                let pre = k_pre.expect("computed for this mode");
                let opts = step_opts.as_ref().expect("validated");
                let (kt, exhausted) = step_constant(&kernels, &names, &theta, &data_box, opts)?;
                if exhausted {
                    fallbacks += 1;
                }
                (if kt < pre { kt } else { pre }, exhausted)
            }
            TrainMode::ClipBaseline => (config.clip_baseline.as_ref().expect("validated").clip_norm, false),
        };
        let scale: Vec<f64> = norms.iter().map(|&n| if n <= k { 1.0 } else { k / n }).collect();
        let clipped = scale.iter().filter(|&&s| s < 1.0).count();

        let mut sum = vec![0.0; p];
        for (i, s) in scale.iter().enumerate() {
            for (acc, g) in sum.iter_mut().zip(&out.data[i * stride + 1..i * stride + 1 + p]) {
                *acc += s * g;
            }
        }
        let noise_std = if private {
            let mech = GaussianMechanism::new(k, noise)?;
            ledger.compose(&mech);
            let s = mech.noise_std();
            let normal = Normal::new(0.0, s).expect("finite std");
            for acc in &mut sum {
                *acc += normal.sample(&mut noise_rng);
            }
            s
        } else {
            0.0
        };
        let divisor = lot.len().max(1) as f64;
        let mut projected = 0;
        for (w, g) in theta.iter_mut().zip(&sum) {
            *w -= config.learning_rate * g / divisor;
            if let Some(r) = radius {
                if w.abs() > r {
                    *w = w.clamp(-r, r);
                    projected += 1;
                }
            }
        }
        if 2 * projected > p {
            bias_warning_steps += 1;
        }

        let n = lot.len();
        let mean = |f: &dyn Fn(usize) -> f64| (n > 0).then(|| (0..n).map(f).sum::<f64>() / n as f64);
        steps.push(StepRecord {
            step: t,
            lot_size: n,
            loss: mean(&|i| out.data[i * stride]),
            max_norm: norms.iter().copied().reduce(f64::max),
            mean_norm: mean(&|i| norms[i]),
            k,
            k_fallback,
            clipped,
            projected,
            noise_std,
        });
    }

    let all: Vec<usize> = (0..data.len()).collect();
    let batch = rows_for(data, &all, &theta);
    let outputs = kernels.output_kernel.execute_parallel(&batch, config.workers)?;
    let losses = kernels.loss_kernel.execute_parallel(&batch, config.workers)?;
    let threshold = match config.model.loss {
        LossKind::Logistic => 0.0,
        LossKind::Mse => 0.5,
    };
    let correct = outputs.data.iter().zip(&data.targets).filter(|(z, y)| (**z > threshold) == (**y > 0.5)).count();
    let summary = Summary {
        mode: config.mode,
        steps: steps.len(),
        parameters: names,
        final_weights: theta,
        k_precomputed: k_pre,
        k_precomputed_lower: k_pre_lower,
        k_precomputed_flags: k_pre_flags,
        train_accuracy: correct as f64 / data.len() as f64,
        train_loss: losses.data.iter().sum::<f64>() / data.len() as f64,
        total_clipped: steps.iter().map(|s| s.clipped).sum(),
        max_norm: steps.iter().filter_map(|s| s.max_norm).reduce(f64::max),
        per_step_fallbacks: fallbacks,
        bias_warning_steps,
        bias_warning: bias_warning_steps > 0,
        private,
        ledger: ledger.export(&config.deltas)?,
    };
    Ok(TrainReport { steps, summary, ledger })
}
