use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the monotone difficulty map applied to normalized loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiKind {
    Identity,
    Sigmoid,
    Power,
    Log,
}

/// Monotone map `[0, 1] -> [0, 1]` from normalized loss to difficulty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhiConfig {
    pub kind: PhiKind,
    /// Sigmoid slope.
    pub k: f64,
    /// Sigmoid center.
    pub c: f64,
    /// Power-map exponent.
    pub p: f64,
    /// Log-map scale.
    pub kappa: f64,
}

impl Default for PhiConfig {
    fn default() -> Self {
        Self { kind: PhiKind::Sigmoid, k: 10.0, c: 0.5, p: 2.0, kappa: 10.0 }
    }
}

impl PhiConfig {
    pub fn identity() -> Self {
        Self { kind: PhiKind::Identity, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("k", self.k), ("c", self.c), ("p", self.p), ("kappa", self.kappa)] {
            if !v.is_finite() {
                return Err(Error::range(format!("memory.phi.{name}"), "must be finite"));
            }
        }
        if self.k <= 0.0 {
            return Err(Error::range("memory.phi.k", "must be > 0"));
        }
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(Error::range("memory.phi.c", "must lie in (0, 1)"));
        }
        if self.p <= 0.0 {
            return Err(Error::range("memory.phi.p", "must be > 0"));
        }
        if self.kappa <= 0.0 {
            return Err(Error::range("memory.phi.kappa", "must be > 0"));
        }
        Ok(())
    }

    /// Evaluates the map at `x`, which must lie in `[0, 1]`.
    pub fn apply(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::invalid("phi.x", format!("{x} is outside [0, 1]")));
        }
        let y = match self.kind {
            PhiKind::Identity => x,
            PhiKind::Sigmoid => 1.0 / (1.0 + (-self.k * (x - self.c)).exp()),
            PhiKind::Power => x.powf(self.p),
            PhiKind::Log => (self.kappa * x).ln_1p() / self.kappa.ln_1p(),
        };
        Ok(y.clamp(0.0, 1.0))
    }
}

/// Constants of the per-sample retention dynamics.
///
/// Defaults: `alpha = 0.01`,
/// `gamma_d = 0.20`, sigmoid difficulty map with `k = 10`, `c = 0.5`,
/// `eta_s = 0.05`, `beta_s = 0.5`, `rho = 0.01`, `gamma_s = 1.0`,
/// stability bounds `(1, 10)`, no consolidation noise, EMA coefficient
/// `0.95` and normalization quantiles `(0.05, 0.95)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryParams {
    /// Baseline decay rate per step.
    pub alpha: f64,
    /// Loss sensitivity of the hazard.
    pub gamma_d: f64,
    pub phi: PhiConfig,
    /// Consolidation step size.
    pub eta_s: f64,
    /// Saturation exponent of the consolidation gain.
    pub beta_s: f64,
    /// Spacing sensitivity (per step).
    pub rho: f64,
    /// Error-reinforcement exponent.
    pub gamma_s: f64,
    pub s_min: f64,
    pub s_max: f64,
    /// Standard deviation of the consolidation noise.
    pub sigma_s: f64,
    pub beta_ema: f64,
    pub q_lower: f64,
    pub q_upper: f64,
    /// Number of recent EMA losses kept for quantile normalization.
    pub normalizer_capacity: usize,
}

impl Default for MemoryParams {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            gamma_d: 0.20,
            phi: PhiConfig::default(),
            eta_s: 0.05,
            beta_s: 0.5,
            rho: 0.01,
            gamma_s: 1.0,
            s_min: 1.0,
            s_max: 10.0,
            sigma_s: 0.0,
            beta_ema: 0.95,
            q_lower: 0.05,
            q_upper: 0.95,
            normalizer_capacity: 4096,
        }
    }
}

impl MemoryParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("alpha", self.alpha),
            ("gamma_d", self.gamma_d),
            ("eta_s", self.eta_s),
            ("beta_s", self.beta_s),
            ("rho", self.rho),
            ("gamma_s", self.gamma_s),
            ("s_min", self.s_min),
            ("s_max", self.s_max),
            ("sigma_s", self.sigma_s),
            ("beta_ema", self.beta_ema),
            ("q_lower", self.q_lower),
            ("q_upper", self.q_upper),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::range(format!("memory.{name}"), "must be finite"));
            }
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("gamma_d", self.gamma_d),
            ("eta_s", self.eta_s),
            ("rho", self.rho),
            ("gamma_s", self.gamma_s),
            ("sigma_s", self.sigma_s),
        ] {
            if v < 0.0 {
                return Err(Error::range(format!("memory.{name}"), "must be >= 0"));
            }
        }
        if !(self.beta_s > 0.0 && self.beta_s <= 1.0) {
            return Err(Error::range("memory.beta_s", "must lie in (0, 1]"));
        }
        if !(self.s_min > 0.0 && self.s_min <= self.s_max) {
            return Err(Error::range("memory.s_min", "need 0 < s_min <= s_max"));
        }
        if !(self.beta_ema > 0.0 && self.beta_ema < 1.0) {
            return Err(Error::range("memory.beta_ema", "must lie in (0, 1)"));
        }
        if !(0.0 <= self.q_lower && self.q_lower < self.q_upper && self.q_upper <= 1.0) {
            return Err(Error::range("memory.q_lower", "need 0 <= q_lower < q_upper <= 1"));
        }
        if self.normalizer_capacity < 2 {
            return Err(Error::range("memory.normalizer_capacity", "must be >= 2"));
        }
        self.phi.validate()
    }
}
