use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bounds::{InputBox, Interval, LipschitzOptions, DEFAULT_BUDGET, DEFAULT_TOLERANCE};
use crate::dp::NoiseConvention;

use super::model::ModelSpec;
use super::DpsgdError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    PrecomputedK,
    PerStepK,
    ClipBaseline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    #[default]
    Poisson,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightBoxSection {
    /// Every parameter is kept in `[-weight_radius, weight_radius]`.
    pub weight_radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerStepSection {
    pub weight_radius: f64,
    /// Branch-and-bound expansions per step.
    #[serde(default = "default_step_budget")]
    pub budget: usize,
}

fn default_step_budget() -> usize {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipSection {
    pub clip_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LipschitzSection {
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_budget")]
    pub budget: usize,
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

fn default_budget() -> usize {
    DEFAULT_BUDGET
}

impl Default for LipschitzSection {
    fn default() -> Self {
        LipschitzSection { tolerance: DEFAULT_TOLERANCE, budget: DEFAULT_BUDGET }
    }
}

fn default_deltas() -> Vec<f64> {
    vec![1e-5]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub learning_rate: f64,
    /// σ; zero disables noise and privacy accounting.
    pub noise_multiplier: f64,
    #[serde(default)]
    pub noise_convention: NoiseConvention,
    /// Expected lot size L.
    pub lot_size: usize,
    pub steps: usize,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads for per-sample gradients; results do not depend on it.
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    pub model: ModelSpec,
    /// Box for every feature `x1..xd` and the target `y`.
    pub bounds: BTreeMap<String, [f64; 2]>,
    #[serde(default, rename = "precomputed-k")]
    pub precomputed_k: Option<WeightBoxSection>,
    #[serde(default, rename = "per-step-k")]
    pub per_step_k: Option<PerStepSection>,
    #[serde(default, rename = "clip-baseline")]
    pub clip_baseline: Option<ClipSection>,
    #[serde(default)]
    pub lipschitz: LipschitzSection,
}

fn one() -> usize {
    1
}

fn positive(name: &str, v: f64) -> Result<(), DpsgdError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(DpsgdError::Config(format!("{name} must be positive, got {v}")))
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, DpsgdError> {
        let c: TrainConfig = toml::from_str(text).map_err(|e| DpsgdError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), DpsgdError> {
        self.model.validate()?;
        positive("learning_rate", self.learning_rate)?;
        if !(self.noise_multiplier.is_finite() && self.noise_multiplier >= 0.0) {
            return Err(DpsgdError::Config(format!(
                "noise_multiplier must be non-negative, got {}",
                self.noise_multiplier
            )));
        }
        if self.lot_size == 0 {
            return Err(DpsgdError::Config("lot_size must be positive".into()));
        }
        if self.workers == 0 {
            return Err(DpsgdError::Config("workers must be positive".into()));
        }
        for &d in &self.deltas {
            if !(d > 0.0 && d < 1.0) {
                return Err(DpsgdError::Config(format!("delta must lie in (0, 1), got {d}")));
            }
        }
        positive("lipschitz.tolerance", self.lipschitz.tolerance)?;
        if self.lipschitz.budget == 0 {
            return Err(DpsgdError::Config("lipschitz.budget must be positive".into()));
        }
        match self.mode {
            TrainMode::PrecomputedK => {
                let s = self.precomputed_k.as_ref().ok_or_else(|| missing("precomputed-k", "weight_radius"))?;
                positive("precomputed-k.weight_radius", s.weight_radius)?;
            }
            TrainMode::PerStepK => {
                let s = self.per_step_k.as_ref().ok_or_else(|| missing("per-step-k", "weight_radius"))?;
                positive("per-step-k.weight_radius", s.weight_radius)?;
                if s.budget == 0 {
                    return Err(DpsgdError::Config("per-step-k.budget must be positive".into()));
                }
            }
            TrainMode::ClipBaseline => {
                let s = self.clip_baseline.as_ref().ok_or_else(|| missing("clip-baseline", "clip_norm"))?;
                positive("clip-baseline.clip_norm", s.clip_norm)?;
            }
        }
        let mut needed: Vec<String> = (1..=self.model.layers[0]).map(|i| format!("x{i}")).collect();
        needed.push("y".into());
        let absent: Vec<&str> = needed.iter().filter(|n| !self.bounds.contains_key(*n)).map(|s| s.as_str()).collect();
        if !absent.is_empty() {
            return Err(DpsgdError::Config(format!("bounds missing for {}", absent.join(", "))));
        }
        for (name, [lo, hi]) in &self.bounds {
            if !needed.contains(name) {
                return Err(DpsgdError::Config(format!("bounds given for unknown variable {name}")));
            }
            if Interval::new(*lo, *hi).is_none() {
                return Err(DpsgdError::Config(format!("invalid bounds [{lo}, {hi}] for {name}")));
            }
        }
        Ok(())
    }

    /// Radius of the weight box, for modes that keep weights bounded.
    pub fn weight_radius(&self) -> Option<f64> {
        match self.mode {
            TrainMode::PrecomputedK => self.precomputed_k.as_ref().map(|s| s.weight_radius),
            TrainMode::PerStepK => self.per_step_k.as_ref().map(|s| s.weight_radius),
            TrainMode::ClipBaseline => None,
        }
    }

    /// Box over features and target.
    pub fn data_box(&self) -> InputBox {
        let mut b = InputBox::new();
        for (name, [lo, hi]) in &self.bounds {
            b.insert(name.clone(), Interval::new(*lo, *hi).expect("validated"));
        }
        b
    }

    pub fn lipschitz_options(&self) -> LipschitzOptions {
        LipschitzOptions {
            tolerance: self.lipschitz.tolerance,
            budget: self.lipschitz.budget,
            closed_form: false,
            ..LipschitzOptions::default()
        }
    }
}

fn missing(section: &str, field: &str) -> DpsgdError {
    DpsgdError::Config(format!("mode {section} requires [{section}] {field}"))
}
