use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the gap to the next replay event is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// Geometric-like expansion `dt <- dt * (1 + eta_p * exp(-rho_p * k))`.
    Expanding,
    /// Next gap is the mean-field time for retention to fall to `theta`.
    Threshold,
    /// Constant gap `initial_interval`.
    Fixed,
    /// Gaps taken from `explicit_intervals`; the last one repeats.
    ExplicitSequence,
}

/// Which closed form the replay ratio follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioForm {
    /// `lambda_min + (lambda0 - lambda_min) * exp(-beta_r * t)`; starts at `lambda0`.
    Interpolated,
    /// `lambda0 * exp(-beta_r * t) + lambda_min`, capped at 1; starts at `lambda0 + lambda_min`.
    Offset,
}

/// Dataset-level scheduling constants. Defaults:
/// first gap 100 steps, `eta_p = 0.5`, `rho_p = 0.05`, `theta = 0.5`,
/// `lambda0 = 0.3`, `lambda_min = 0.05`, `beta_r = 1e-5`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerParams {
    pub initial_interval: f64,
    pub eta_p: f64,
    pub rho_p: f64,
    pub theta: f64,
    pub lambda0: f64,
    pub lambda_min: f64,
    pub beta_r: f64,
    pub mode: ScheduleMode,
    pub explicit_intervals: Vec<f64>,
    pub ratio_form: RatioForm,
    /// Restart the cycle counter and spacing when a new dataset is registered.
    pub reset_on_new_dataset: bool,
    /// Upper bound on samples used for mean-field statistics in threshold mode.
    pub stats_sample_cap: usize,
}

impl Default for SchedulerParams {
    fn default() -> Self {
        Self {
            initial_interval: 100.0,
            eta_p: 0.5,
            rho_p: 0.05,
            theta: 0.5,
            lambda0: 0.3,
            lambda_min: 0.05,
            beta_r: 1e-5,
            mode: ScheduleMode::Expanding,
            explicit_intervals: Vec::new(),
            ratio_form: RatioForm::Interpolated,
            reset_on_new_dataset: false,
            stats_sample_cap: 4096,
        }
    }
}

impl SchedulerParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("initial_interval", self.initial_interval),
            ("eta_p", self.eta_p),
            ("rho_p", self.rho_p),
            ("theta", self.theta),
            ("lambda0", self.lambda0),
            ("lambda_min", self.lambda_min),
            ("beta_r", self.beta_r),
        ] {
            if !v.is_finite() {
                return Err(Error::range(format!("scheduler.{name}"), "must be finite"));
            }
        }
        if self.initial_interval <= 0.0 {
            return Err(Error::range("scheduler.initial_interval", "must be > 0"));
        }
        for (name, v) in [("eta_p", self.eta_p), ("rho_p", self.rho_p), ("beta_r", self.beta_r)] {
            if v < 0.0 {
                return Err(Error::range(format!("scheduler.{name}"), "must be >= 0"));
            }
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::range("scheduler.theta", "must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.lambda0) {
            return Err(Error::range("scheduler.lambda0", "must lie in [0, 1]"));
        }
        if !(self.lambda_min >= 0.0 && self.lambda_min <= self.lambda0) {
            return Err(Error::range("scheduler.lambda_min", format!("must lie in [0, lambda0 = {}]", self.lambda0)));
        }
        if self.mode == ScheduleMode::ExplicitSequence && self.explicit_intervals.is_empty() {
            return Err(Error::range(
                "scheduler.explicit_intervals",
                "explicit_sequence mode needs at least one interval",
            ));
        }
        if self.explicit_intervals.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::range("scheduler.explicit_intervals", "intervals must be finite and > 0"));
        }
        if self.stats_sample_cap == 0 {
            return Err(Error::range("scheduler.stats_sample_cap", "must be >= 1"));
        }
        Ok(())
    }
}

/// Replay ratio at `step`. Non-increasing in `step`.
pub fn replay_ratio(step: u64, params: &SchedulerParams) -> f64 {
    let decay = (-params.beta_r * step as f64).exp();
    match params.ratio_form {
        RatioForm::Interpolated => params.lambda_min + (params.lambda0 - params.lambda_min) * decay,
        RatioForm::Offset => (params.lambda0 * decay + params.lambda_min).min(1.0),
    }
}
