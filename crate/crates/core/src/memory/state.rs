use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::params::MemoryParams;
use crate::error::{Error, Result};

/// Smallest representable memory strength. Keeps `m > 0` and bounds
/// `m^-zeta` during prioritization.
pub const M_FLOOR: f64 = 1e-300;

/// Opaque sample identifier supplied by the trainer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleId(pub u64);

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Instantaneous hazard `(alpha + gamma_d * phi(norm_loss)) / s`.
pub fn hazard(norm_loss: f64, s: f64, params: &MemoryParams) -> Result<f64> {
    hazard_with_alpha(params.alpha, norm_loss, s, params)
}

pub fn hazard_with_alpha(alpha: f64, norm_loss: f64, s: f64, params: &MemoryParams) -> Result<f64> {
    if !(s >= params.s_min) {
        return Err(Error::invalid("s", format!("stability {s} is below s_min {}", params.s_min)));
    }
    Ok(hazard_numerator(alpha, norm_loss, params)? / s)
}

pub(crate) fn hazard_numerator(alpha: f64, norm_loss: f64, params: &MemoryParams) -> Result<f64> {
    Ok(alpha + params.gamma_d * params.phi.apply(norm_loss)?)
}

/// Retention record for one tracked sample.
///
/// `m` is exact at `anchor_step`; later values are obtained lazily through
/// [`SampleState::retention_at`] using the cached `hazard_estimate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleState {
    pub id: SampleId,
    /// Memory strength at `anchor_step`, in `(0, 1]`.
    pub m: f64,
    /// Stability, in `[s_min, s_max]`.
    pub s: f64,
    /// Step of the most recent review (or of first exposure).
    pub last_review_step: u64,
    /// Step at which `m` was last materialized.
    pub anchor_step: u64,
    /// Denoised loss; `None` until the first loss is observed.
    pub ema_loss: Option<f64>,
    /// Quantile-normalized loss in `[0, 1]`.
    pub norm_loss: f64,
    pub hazard_estimate: f64,
    /// Per-sample override of the shared baseline decay.
    pub alpha: Option<f64>,
}

/// Result of a review: the retention just before the reset and the stability change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Consolidation {
    pub m_pre: f64,
    pub elapsed: u64,
    pub delta_s: f64,
}

impl SampleState {
    /// Fresh state at first exposure: `m = 1`, `s = s_min`, neutral difficulty.
    pub fn new(id: SampleId, step: u64, params: &MemoryParams) -> Self {
        let norm_loss = 0.5;
        let s = params.s_min;
        let hazard_estimate = hazard(norm_loss, s, params).unwrap_or(0.0);
        Self {
            id,
            m: 1.0,
            s,
            last_review_step: step,
            anchor_step: step,
            ema_loss: None,
            norm_loss,
            hazard_estimate,
            alpha: None,
        }
    }

    pub fn alpha(&self, params: &MemoryParams) -> f64 {
        self.alpha.unwrap_or(params.alpha)
    }

    /// Hazard from this sample's current normalized loss and stability.
    pub fn current_hazard(&self, params: &MemoryParams) -> Result<f64> {
        hazard_with_alpha(self.alpha(params), self.norm_loss, self.s, params)
    }

    /// Folds a raw loss into the EMA. The first observation seeds the EMA.
    pub fn update_ema_loss(&mut self, raw_loss: f64, params: &MemoryParams) -> Result<f64> {
        if !raw_loss.is_finite() || raw_loss < 0.0 {
            return Err(Error::invalid(
                "loss",
                format!("sample {}: loss must be finite and >= 0, got {raw_loss}", self.id),
            ));
        }
        let ema = match self.ema_loss {
            None => raw_loss,
            Some(prev) => params.beta_ema * prev + (1.0 - params.beta_ema) * raw_loss,
        };
        self.ema_loss = Some(ema);
        Ok(ema)
    }

    /// One multiplicative decay step `m <- m * exp(-h)`.
    pub fn step_decay(&mut self, h: f64) -> Result<()> {
        check_hazard(h)?;
        self.m = (self.m * (-h).exp()).max(M_FLOOR);
        self.anchor_step += 1;
        Ok(())
    }

    /// Closed-form retention at `query_step` without mutating the state.
    pub fn retention_at(&self, query_step: u64) -> Result<f64> {
        if query_step < self.anchor_step {
            return Err(Error::invalid(
                "query_step",
                format!("sample {}: step {query_step} precedes last update at {}", self.id, self.anchor_step),
            ));
        }
        let dt = (query_step - self.anchor_step) as f64;
        if dt == 0.0 {
            return Ok(self.m);
        }
        Ok((self.m * (-self.hazard_estimate * dt).exp()).max(M_FLOOR))
    }

    /// Writes the lazily computed retention back into `m` and moves the anchor.
    pub fn materialize(&mut self, now: u64) -> Result<f64> {
        let m = self.retention_at(now)?;
        self.m = m;
        self.anchor_step = now;
        Ok(m)
    }

    /// Epoch-boundary update: recompute the hazard from the epoch-end loss
    /// and apply it over the whole epoch (right-endpoint rule).
    pub fn epoch_update(&mut self, norm_loss: f64, dt_epoch: u64, params: &MemoryParams) -> Result<()> {
        if dt_epoch == 0 {
            return Err(Error::invalid("dt_epoch", "epoch length must be >= 1"));
        }
        let h = hazard_with_alpha(self.alpha(params), norm_loss, self.s, params)?;
        self.norm_loss = norm_loss;
        self.m = (self.m * (-h * dt_epoch as f64).exp()).max(M_FLOOR);
        self.hazard_estimate = h;
        self.anchor_step += dt_epoch;
        Ok(())
    }

    /// Review at `now`: reset `m` to 1 and grow stability by the saturating,
    /// spacing- and error-modulated gain, clipped to `[s_min, s_max]`.
    ///
    /// Uses the stored `m` as the pre-review strength; call
    /// [`SampleState::materialize`] first when the state is lazily tracked.
    pub fn consolidate<R: Rng + ?Sized>(
        &mut self,
        now: u64,
        params: &MemoryParams,
        rng: &mut R,
    ) -> Result<Consolidation> {
        if now < self.last_review_step {
            return Err(Error::invalid(
                "now_step",
                format!("sample {}: review at {now} precedes previous review at {}", self.id, self.last_review_step),
            ));
        }
        let elapsed = now - self.last_review_step;
        let m_pre = self.m;
        let headroom = (params.s_max - self.s).max(0.0);
        let gain = params.eta_s
            * headroom.powf(params.beta_s)
            * (-params.rho * elapsed as f64).exp()
            * (1.0 - m_pre).max(0.0).powf(params.gamma_s);
        let noise = if params.sigma_s > 0.0 {
            Normal::new(0.0, params.sigma_s).map_err(|e| Error::invalid("sigma_s", e.to_string()))?.sample(rng)
        } else {
            0.0
        };
        let s_old = self.s;
        self.s = (self.s + gain + noise).clamp(params.s_min, params.s_max);
        self.m = 1.0;
        self.last_review_step = now;
        self.anchor_step = self.anchor_step.max(now);
        // Stability changed, so the cached rate must follow.
        self.hazard_estimate = self.current_hazard(params)?;
        Ok(Consolidation { m_pre, elapsed, delta_s: self.s - s_old })
    }

    pub fn check_invariants(&self, params: &MemoryParams) -> Result<()> {
        if !(self.m > 0.0 && self.m <= 1.0) {
            return Err(Error::range("m", format!("sample {}: m = {}", self.id, self.m)));
        }
        if !(self.s >= params.s_min && self.s <= params.s_max) {
            return Err(Error::range("s", format!("sample {}: s = {}", self.id, self.s)));
        }
        if !(self.hazard_estimate >= 0.0) {
            return Err(Error::range("hazard_estimate", format!("sample {}: {}", self.id, self.hazard_estimate)));
        }
        Ok(())
    }
}

fn check_hazard(h: f64) -> Result<()> {
    if !(h >= 0.0) || h.is_infinite() {
        return Err(Error::invalid("h", format!("hazard must be finite and >= 0, got {h}")));
    }
    Ok(())
}
