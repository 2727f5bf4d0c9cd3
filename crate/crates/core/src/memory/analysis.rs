//! Closed-form horizons and the epoch-discretization error check.

use serde::{Deserialize, Serialize};

use super::params::MemoryParams;
use super::state::hazard_numerator;
use crate::error::{Error, Result};

/// Time until retention crosses a threshold. `Never` when the hazard is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    Steps(f64),
    Never,
}

impl Horizon {
    pub fn steps(self) -> Option<f64> {
        match self {
            Horizon::Steps(t) => Some(t),
            Horizon::Never => None,
        }
    }

    /// Time for `exp(-rate * t)` to fall to `theta`.
    pub fn from_rate(rate: f64, theta: f64) -> Self {
        if rate > 0.0 {
            Horizon::Steps((1.0 / theta).ln() / rate)
        } else {
            Horizon::Never
        }
    }
}

pub(crate) fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::invalid("theta", format!("{theta} is outside (0, 1)")));
    }
    Ok(())
}

/// Steps until a freshly reviewed sample with stability `s` and normalized
/// loss `norm_loss` decays to retention `theta`:
/// `s / (alpha + gamma_d * phi(norm_loss)) * ln(1 / theta)`.
pub fn time_to_threshold(s: f64, norm_loss: f64, theta: f64, params: &MemoryParams) -> Result<Horizon> {
    check_theta(theta)?;
    if !(s > 0.0) {
        return Err(Error::invalid("s", "stability must be > 0"));
    }
    let numerator = hazard_numerator(params.alpha, norm_loss, params)?;
    Ok(Horizon::from_rate(numerator / s, theta))
}

/// Epoch-level vs. fine-grid log-retention over one interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiemannGap {
    /// Right-endpoint estimate `-h(t1) * dt`.
    pub epoch_log_m: f64,
    /// Trapezoidal estimate of `-integral h`.
    pub fine_log_m: f64,
    /// `(L / 2) * dt^2`.
    pub bound: f64,
    /// Worst-case trapezoid error for an `L`-Lipschitz integrand, `L * dt^2 / n`.
    pub slack: f64,
}

impl RiemannGap {
    pub fn gap(&self) -> f64 {
        (self.epoch_log_m - self.fine_log_m).abs()
    }

    pub fn within_bound(&self) -> bool {
        self.gap() <= self.bound + self.slack
    }
}

/// Compares the right-endpoint epoch approximation of `-integral h` on
/// `[t0, t1]` with a fine trapezoidal quadrature, alongside the Lipschitz
/// bound. Verification utility only.
pub fn riemann_gap<F>(hazard_fn: F, t0: f64, t1: f64, fine_resolution: usize, lipschitz: f64) -> Result<RiemannGap>
where
    F: Fn(f64) -> f64,
{
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::invalid("interval", format!("need t0 < t1, got [{t0}, {t1}]")));
    }
    if fine_resolution == 0 {
        return Err(Error::invalid("fine_resolution", "must be >= 1"));
    }
    if !(lipschitz >= 0.0) || lipschitz.is_infinite() {
        return Err(Error::invalid("lipschitz", "must be finite and >= 0"));
    }
    let dt = t1 - t0;
    let width = dt / fine_resolution as f64;
    let eval = |t: f64| -> Result<f64> {
        let h = hazard_fn(t);
        if h.is_finite() {
            Ok(h)
        } else {
            Err(Error::invalid("hazard_fn", format!("non-finite hazard {h} at t = {t}")))
        }
    };
    let h_end = eval(t1)?;
    let mut integral = 0.5 * (eval(t0)? + h_end);
    for i in 1..fine_resolution {
        integral += eval(t0 + width * i as f64)?;
    }
    integral *= width;
    Ok(RiemannGap {
        epoch_log_m: -h_end * dt,
        fine_log_m: -integral,
        bound: 0.5 * lipschitz * dt * dt,
        slack: lipschitz * dt * dt / fine_resolution as f64,
    })
}
