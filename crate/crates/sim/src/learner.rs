//! Surrogate learner: saturating skill gain on training, exponential drift otherwise.

use rand::Rng;
use serde::{Deserialize, Serialize};

pub const Q_FLOOR: f64 = 1e-6;

/// One task in the sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTask {
    pub id: usize,
    pub samples: usize,
    /// Mean per-sample difficulty, in (0, 1).
    pub base_difficulty: f64,
    /// Half-width of the uniform difficulty spread around the base.
    pub difficulty_spread: f64,
    /// Nominal per-step drift rate.
    pub drift: f64,
    /// Nominal learning gain, in (0, 1).
    pub gain: f64,
}

impl SyntheticTask {
    pub fn validate(&self) -> Result<(), String> {
        if self.samples == 0 {
            return Err(format!("task {}: needs at least one sample", self.id));
        }
        let finite =
            [self.base_difficulty, self.difficulty_spread, self.drift, self.gain].iter().all(|v| v.is_finite());
        if !finite {
            return Err(format!("task {}: rates must be finite", self.id));
        }
        if !(self.base_difficulty > 0.0 && self.base_difficulty < 1.0) {
            return Err(format!("task {}: base_difficulty must lie in (0, 1)", self.id));
        }
        if self.difficulty_spread < 0.0 || self.drift < 0.0 {
            return Err(format!("task {}: spread and drift must be >= 0", self.id));
        }
        if !(self.gain >= 0.0 && self.gain < 1.0) {
            return Err(format!("task {}: gain must lie in [0, 1)", self.id));
        }
        Ok(())
    }
}

/// Per-sample skill with fixed per-sample learning and drift rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerState {
    pub q: Vec<f64>,
    pub exposures: Vec<u64>,
    pub gain: Vec<f64>,
    pub drift: Vec<f64>,
    pub difficulty: Vec<f64>,
}

impl LearnerState {
    /// Draws per-sample difficulty `delta` uniformly around each task's base.
    /// Initial skill is `1 - delta`; gain scales as `1.5 - delta` and drift
    /// as `0.5 + delta`, so both equal the nominal rate at `delta = 0.5`.
    pub fn new<R: Rng + ?Sized>(tasks: &[SyntheticTask], rng: &mut R) -> Self {
        let n: usize = tasks.iter().map(|t| t.samples).sum();
        let mut s = Self {
            q: Vec::with_capacity(n),
            exposures: vec![0; n],
            gain: Vec::with_capacity(n),
            drift: Vec::with_capacity(n),
            difficulty: Vec::with_capacity(n),
        };
        for t in tasks {
            for _ in 0..t.samples {
                let u: f64 = rng.random();
                let delta = (t.base_difficulty + t.difficulty_spread * (2.0 * u - 1.0)).clamp(0.01, 0.99);
                s.difficulty.push(delta);
                s.q.push((1.0 - delta).max(Q_FLOOR));
                s.gain.push((t.gain * (1.5 - delta)).clamp(0.0, 0.999));
                s.drift.push(t.drift * (0.5 + delta));
            }
        }
        s
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn train(&mut self, ids: &[usize]) {
        for &i in ids {
            self.q[i] = train_one(self.q[i], self.gain[i]);
            self.exposures[i] += 1;
        }
    }

    /// One step of drift for every sample whose `trained` flag is false.
    pub fn drift_untrained(&mut self, trained: &[bool]) {
        for (i, q) in self.q.iter_mut().enumerate() {
            if !trained[i] {
                *q = drift_one(*q, self.drift[i], 1);
            }
        }
    }

    pub fn mean_q(&self, range: std::ops::Range<usize>) -> f64 {
        let n = range.len() as f64;
        self.q[range].iter().sum::<f64>() / n
    }
}

fn train_one(q: f64, g: f64) -> f64 {
    (q + g * (1.0 - q)).clamp(Q_FLOOR, 1.0)
}

fn drift_one(q: f64, d: f64, n: u64) -> f64 {
    (q * (-d * n as f64).exp()).max(Q_FLOOR)
}

/// `q <- q + g (1 - q)` for each id.
pub fn learner_train(state: &mut LearnerState, ids: &[usize], g: f64) {
    for &i in ids {
        state.q[i] = train_one(state.q[i], g);
        state.exposures[i] += 1;
    }
}

/// `q <- max(q exp(-d n), floor)` for each id.
pub fn learner_drift(state: &mut LearnerState, ids: &[usize], d: f64, n: u64) {
    for &i in ids {
        state.q[i] = drift_one(state.q[i], d, n);
    }
}

/// `-ln q`.
pub fn observed_loss(q: f64) -> f64 {
    -q.max(Q_FLOOR).ln()
}
