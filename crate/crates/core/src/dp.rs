//! Rényi-DP accounting for Gaussian mechanisms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default grid of Rényi orders.
pub const DEFAULT_ORDERS: [f64; 11] = [1.25, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 16.0, 32.0, 64.0];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DpError {
    #[error("Rényi order must be a finite value > 1, got {0}")]
    InvalidOrder(f64),
    #[error("delta must lie in (0, 1), got {0}")]
    InvalidDelta(f64),
    #[error("sensitivity must be positive and finite, got {0}")]
    InvalidSensitivity(f64),
    #[error("noise parameter must be positive and finite, got {0}")]
    InvalidNoise(f64),
    #[error("target epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
}

/// How a noise parameter maps to the standard deviation of the noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseConvention {
    /// std = σ·K
    #[default]
    Multiplier,
    /// variance = σ²·K, so std = σ·√K
    Variance,
}

/// Noise of a Gaussian mechanism.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum Noise {
    /// Noise multiplier σ with std = σ·K.
    Multiplier(f64),
    /// σ with variance σ²·K.
    Variance(f64),
    /// Absolute standard deviation.
    Std(f64),
}

impl Noise {
    pub fn from_convention(sigma: f64, convention: NoiseConvention) -> Noise {
        match convention {
            NoiseConvention::Multiplier => Noise::Multiplier(sigma),
            NoiseConvention::Variance => Noise::Variance(sigma),
        }
    }

    fn value(self) -> f64 {
        match self {
            Noise::Multiplier(v) | Noise::Variance(v) | Noise::Std(v) => v,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMechanism {
    pub sensitivity: f64,
    pub noise: Noise,
}

impl GaussianMechanism {
    pub fn new(sensitivity: f64, noise: Noise) -> Result<Self, DpError> {
        if !(sensitivity.is_finite() && sensitivity > 0.0) {
            return Err(DpError::InvalidSensitivity(sensitivity));
        }
        let v = noise.value();
        if !(v.is_finite() && v > 0.0) {
            return Err(DpError::InvalidNoise(v));
        }
        Ok(GaussianMechanism { sensitivity, noise })
    }

    pub fn with_multiplier(sensitivity: f64, sigma: f64) -> Result<Self, DpError> {
        Self::new(sensitivity, Noise::Multiplier(sigma))
    }

    pub fn with_std(sensitivity: f64, std: f64) -> Result<Self, DpError> {
        Self::new(sensitivity, Noise::Std(std))
    }

    pub fn noise_std(&self) -> f64 {
        match self.noise {
            Noise::Multiplier(s) => s * self.sensitivity,
            Noise::Variance(s) => s * self.sensitivity.sqrt(),
            Noise::Std(s) => s,
        }
    }

    /// K / std, computed without cancelling through the noise std where
    /// the convention makes K drop out.
    fn ratio(&self) -> f64 {
        match self.noise {
            Noise::Multiplier(s) => 1.0 / s,
            Noise::Variance(s) => self.sensitivity.sqrt() / s,
            Noise::Std(s) => self.sensitivity / s,
        }
    }
}

fn check_order(alpha: f64) -> Result<(), DpError> {
    if alpha.is_finite() && alpha > 1.0 {
        Ok(())
    } else {
        Err(DpError::InvalidOrder(alpha))
    }
}

/// Rényi divergence bound α·K²/(2s²) of one Gaussian mechanism.
pub fn rdp_epsilon(mech: &GaussianMechanism, alpha: f64) -> Result<f64, DpError> {
    check_order(alpha)?;
    Ok(0.5 * alpha * mech.ratio().powi(2))
}

/// Noise std reaching `epsilon` at order `alpha` for sensitivity `k`.
pub fn required_noise_std(k: f64, alpha: f64, epsilon: f64) -> Result<f64, DpError> {
    check_order(alpha)?;
    if !(k.is_finite() && k > 0.0) {
        return Err(DpError::InvalidSensitivity(k));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(DpError::InvalidEpsilon(epsilon));
    }
    Ok(k * (alpha / (2.0 * epsilon)).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub step: u64,
    pub mechanism: String,
    pub sensitivity: f64,
    pub noise: Noise,
    pub noise_std: f64,
}

/// Additive RDP composition over a fixed grid of orders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    orders: Vec<f64>,
    epsilon: Vec<f64>,
    events: Vec<LedgerEvent>,
}

impl Default for PrivacyLedger {
    fn default() -> Self {
        Self::new()
    }
}

impl PrivacyLedger {
    pub fn new() -> Self {
        PrivacyLedger { orders: DEFAULT_ORDERS.to_vec(), epsilon: vec![0.0; DEFAULT_ORDERS.len()], events: Vec::new() }
    }

    /// Default grid plus `extra` orders.
    pub fn with_orders(extra: &[f64]) -> Result<Self, DpError> {
        let mut orders = DEFAULT_ORDERS.to_vec();
        for &a in extra {
            check_order(a)?;
            orders.push(a);
        }
        orders.sort_by(f64::total_cmp);
        orders.dedup();
        let n = orders.len();
        Ok(PrivacyLedger { orders, epsilon: vec![0.0; n], events: Vec::new() })
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    /// Accumulated ε(α) per grid order.
    pub fn rdp(&self) -> &[f64] {
        &self.epsilon
    }

    pub fn epsilon_at(&self, alpha: f64) -> Option<f64> {
        self.orders.iter().position(|&a| a == alpha).map(|i| self.epsilon[i])
    }

    pub fn compose(&mut self, mech: &GaussianMechanism) {
        self.compose_labeled(mech, "gaussian");
    }

    pub fn compose_labeled(&mut self, mech: &GaussianMechanism, label: &str) {
        for (e, &a) in self.epsilon.iter_mut().zip(&self.orders) {
            *e += rdp_epsilon(mech, a).expect("grid orders are valid");
        }
        self.events.push(LedgerEvent {
            step: self.events.len() as u64,
            mechanism: label.to_string(),
            sensitivity: mech.sensitivity,
            noise: mech.noise,
            noise_std: mech.noise_std(),
        });
    }

    /// Best (ε, α) over the grid for the given δ; ties go to the smaller α.
    pub fn to_eps_delta(&self, delta: f64) -> Result<(f64, f64), DpError> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(DpError::InvalidDelta(delta));
        }
        let log_inv = (1.0 / delta).ln();
        let mut best = (f64::INFINITY, self.orders[0]);
        for (&a, &e) in self.orders.iter().zip(&self.epsilon) {
            let eps = e + log_inv / (a - 1.0);
            if eps < best.0 {
                best = (eps, a);
            }
        }
        Ok(best)
    }

    pub fn export(&self, deltas: &[f64]) -> Result<LedgerExport, DpError> {
        let conversions = deltas
            .iter()
            .map(|&delta| self.to_eps_delta(delta).map(|(epsilon, alpha)| Conversion { delta, epsilon, alpha }))
            .collect::<Result<_, _>>()?;
        Ok(LedgerExport {
            events: self.events.clone(),
            rdp: self.orders.iter().zip(&self.epsilon).map(|(&alpha, &epsilon)| RdpPoint { alpha, epsilon }).collect(),
            conversions,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdpPoint {
    pub alpha: f64,
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conversion {
    pub delta: f64,
    pub epsilon: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerExport {
    pub events: Vec<LedgerEvent>,
    pub rdp: Vec<RdpPoint>,
    pub conversions: Vec<Conversion>,
}

/// Noise and clipping decision for one step with sensitivity `k_step`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepNoise {
    pub noise_std: f64,
    /// `true` where the sample needs no clipping.
    pub within: Vec<bool>,
    /// Factor each per-sample gradient is multiplied by (1 or K/norm).
    pub scale: Vec<f64>,
    /// Samples whose norm exceeded the bound. With inputs inside the
    /// declared box this is always empty.
    pub violations: Vec<usize>,
}

pub fn per_step_sensitivity_noise(norms: &[f64], k_step: f64, noise: Noise) -> Result<StepNoise, DpError> {
    let mech = GaussianMechanism::new(k_step, noise)?;
    let within: Vec<bool> = norms.iter().map(|&n| n <= k_step).collect();
    let scale = norms.iter().zip(&within).map(|(&n, &ok)| if ok { 1.0 } else { k_step / n }).collect();
    let violations = within.iter().enumerate().filter(|(_, ok)| !**ok).map(|(i, _)| i).collect();
    Ok(StepNoise { noise_std: mech.noise_std(), within, scale, violations })
}
