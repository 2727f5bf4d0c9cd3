use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::params::MemoryParams;

/// Output used when the population is too uniform to define a spread.
pub const NEUTRAL_LOSS: f64 = 0.5;

/// Population-level robust normalizer for EMA losses.
///
/// Keeps the most recent `capacity` EMA values and maps a loss to
/// `clip((x - Q_lo) / (Q_hi - Q_lo), 0, 1)` using exact empirical quantiles
/// (linear interpolation between order statistics).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossNormalizer {
    capacity: usize,
    q_lower: f64,
    q_upper: f64,
    values: VecDeque<f64>,
}

impl LossNormalizer {
    pub fn new(capacity: usize, q_lower: f64, q_upper: f64) -> Self {
        Self { capacity: capacity.max(1), q_lower, q_upper, values: VecDeque::with_capacity(capacity.min(1 << 16)) }
    }

    pub fn from_params(params: &MemoryParams) -> Self {
        Self::new(params.normalizer_capacity, params.q_lower, params.q_upper)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied()
    }

    pub fn insert(&mut self, value: f64) {
        if self.values.len() == self.capacity {
            self.values.pop_front();
        }
        self.values.push_back(value);
    }

    /// Lower and upper quantiles of the reservoir, or `None` when they
    /// coincide (fewer than two distinct values in play).
    pub fn bounds(&self) -> Option<(f64, f64)> {
        if self.values.len() < 2 {
            return None;
        }
        let mut sorted: Vec<f64> = self.values.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        let lo = quantile_sorted(&sorted, self.q_lower);
        let hi = quantile_sorted(&sorted, self.q_upper);
        (hi > lo).then_some((lo, hi))
    }

    /// Normalizes `ema_loss` against the current reservoir, then records it.
    pub fn normalize(&mut self, ema_loss: f64) -> f64 {
        let out = normalize_with(self.bounds(), ema_loss);
        self.insert(ema_loss);
        out
    }

    /// Batch form: every value is normalized against the reservoir as it
    /// stood before the batch, then all values are recorded in order.
    pub fn normalize_batch(&mut self, ema_losses: &[f64]) -> Vec<f64> {
        let bounds = self.bounds();
        let out = ema_losses.iter().map(|&x| normalize_with(bounds, x)).collect();
        for &x in ema_losses {
            self.insert(x);
        }
        out
    }
}

pub fn normalize_with(bounds: Option<(f64, f64)>, x: f64) -> f64 {
    match bounds {
        Some((lo, hi)) => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
        None => NEUTRAL_LOSS,
    }
}

/// Type-7 empirical quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}
