//! Scenario files: task sequence, learner rates, baseline knobs and the
//! engine configuration shared by the engine-backed strategies.

use std::path::Path;

use serde::{Deserialize, Serialize};
use spacedreplay_core::EngineConfig;

use crate::error::{Result, SimError};
use crate::learner::SyntheticTask;

/// Start interval used when a scenario leaves it unset: stages are 0.3x the
/// 2000-step reference length, so the 100-step default scales to 30.
pub const DESK_INITIAL_INTERVAL: f64 = 30.0;

/// The bundled desk-scale scenario.
pub const DEFAULT_SCENARIO: &str = include_str!("../../../scenarios/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub tasks: usize,
    pub samples_per_task: usize,
    pub steps_per_stage: u64,
    pub batch_size: usize,
    /// Steps per engine epoch; losses reported on the last step carry `epoch_end`.
    pub epoch_steps: u64,
    /// Accuracy curve sampling period, in steps.
    pub curve_every: u64,
    /// Base seed; run `k` of a comparison uses `seed + k`.
    pub seed: u64,
    /// When set, task accuracy is the fraction of samples with `q >= threshold`
    /// instead of the mean skill.
    pub accuracy_threshold: Option<f64>,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            tasks: 3,
            samples_per_task: 512,
            steps_per_stage: 600,
            batch_size: 32,
            epoch_steps: 16,
            curve_every: 10,
            seed: 0,
            accuracy_threshold: None,
        }
    }
}

/// Defaults applied to every task unless overridden in a `[[task]]` entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerSettings {
    pub gain: f64,
    pub drift: f64,
    pub base_difficulty: f64,
    pub difficulty_spread: f64,
}

impl Default for LearnerSettings {
    fn default() -> Self {
        Self { gain: 0.3, drift: 0.001, base_difficulty: 0.5, difficulty_spread: 0.4 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskOverride {
    pub id: usize,
    pub samples: Option<usize>,
    pub gain: Option<f64>,
    pub drift: Option<f64>,
    pub base_difficulty: Option<f64>,
    pub difficulty_spread: Option<f64>,
}

/// Knobs for the non-adaptive baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSettings {
    /// Replay ratio used by every baseline event.
    pub replay_ratio: f64,
    pub fixed_interval: u64,
    pub geometric: Vec<f64>,
    pub ebbinghaus: Vec<f64>,
    /// Std-dev of Gaussian noise added to the observed batch loss.
    pub loss_noise: f64,
    /// Fire when the noisy batch loss exceeds `ema * (1 + loss_threshold)`.
    pub loss_threshold: f64,
    pub loss_ema_beta: f64,
    /// Fire when any prior task falls this far below its best evaluated accuracy.
    pub accuracy_drop: f64,
    pub eval_every: u64,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        Self {
            replay_ratio: 0.3,
            fixed_interval: 3,
            geometric: vec![1.0, 3.0, 7.0, 15.0, 30.0],
            ebbinghaus: vec![1.0, 2.0, 4.0, 7.0, 15.0],
            loss_noise: 0.05,
            loss_threshold: 0.1,
            loss_ema_beta: 0.9,
            accuracy_drop: 0.02,
            eval_every: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub run: RunSettings,
    pub learner: LearnerSettings,
    #[serde(rename = "task")]
    pub tasks: Vec<TaskOverride>,
    pub baselines: BaselineSettings,
    /// Engine configuration for the engine-backed strategies. Batch size,
    /// seed, mode and sampler policy are overridden per strategy.
    pub engine: EngineConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let mut engine = EngineConfig::default();
        engine.scheduler.initial_interval = DESK_INITIAL_INTERVAL;
        Self {
            run: RunSettings::default(),
            learner: LearnerSettings::default(),
            tasks: Vec::new(),
            baselines: BaselineSettings::default(),
            engine,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| SimError::Scenario(e.to_string()))?;
        // Without an explicit value the scheduler's start interval is
        // desk-scaled rather than taken from the engine default.
        let has_interval =
            table.get("engine").and_then(|e| e.get("scheduler")).and_then(|s| s.get("initial_interval")).is_some();
        let mut config: ScenarioConfig =
            table.try_into().map_err(|e: toml::de::Error| SimError::Scenario(e.to_string()))?;
        if !has_interval {
            config.engine.scheduler.initial_interval = DESK_INITIAL_INTERVAL;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Scenario(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SimError::Scenario(m.to_string()));
        let r = &self.run;
        if r.tasks < 2 {
            return bad("run.tasks must be >= 2");
        }
        if r.batch_size == 0 || r.steps_per_stage == 0 || r.epoch_steps == 0 || r.curve_every == 0 {
            return bad("run.batch_size, steps_per_stage, epoch_steps and curve_every must be >= 1");
        }
        if let Some(t) = r.accuracy_threshold {
            if !(0.0..=1.0).contains(&t) {
                return bad("run.accuracy_threshold must lie in [0, 1]");
            }
        }
        for o in &self.tasks {
            if o.id >= r.tasks {
                return Err(SimError::Scenario(format!("task id {} out of range", o.id)));
            }
        }
        for t in self.task_list() {
            t.validate().map_err(SimError::Scenario)?;
            if t.samples < r.batch_size {
                return Err(SimError::Scenario(format!("task {}: fewer samples than one batch", t.id)));
            }
        }
        let b = &self.baselines;
        if !(b.replay_ratio > 0.0 && b.replay_ratio <= 1.0) {
            return bad("baselines.replay_ratio must lie in (0, 1]");
        }
        if b.fixed_interval == 0 || b.eval_every == 0 {
            return bad("baselines.fixed_interval and eval_every must be >= 1");
        }
        for seq in [&b.geometric, &b.ebbinghaus] {
            if seq.is_empty() || seq.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return bad("baseline interval sequences must be non-empty and positive");
            }
        }
        let finite_nonneg =
            [b.loss_noise, b.loss_threshold, b.accuracy_drop].iter().all(|v| v.is_finite() && *v >= 0.0);
        if !finite_nonneg || !(b.loss_ema_beta >= 0.0 && b.loss_ema_beta < 1.0) {
            return bad("baseline thresholds must be finite and >= 0, loss_ema_beta in [0, 1)");
        }
        self.engine.validate()?;
        Ok(())
    }

    /// Resolved task sequence in order.
    pub fn task_list(&self) -> Vec<SyntheticTask> {
        let l = &self.learner;
        (0..self.run.tasks)
            .map(|id| {
                let o = self.tasks.iter().find(|o| o.id == id).cloned().unwrap_or_default();
                SyntheticTask {
                    id,
                    samples: o.samples.unwrap_or(self.run.samples_per_task),
                    base_difficulty: o.base_difficulty.unwrap_or(l.base_difficulty),
                    difficulty_spread: o.difficulty_spread.unwrap_or(l.difficulty_spread),
                    drift: o.drift.unwrap_or(l.drift),
                    gain: o.gain.unwrap_or(l.gain),
                }
            })
            .collect()
    }

    /// Same scenario with every drift rate set to `d`.
    pub fn with_drift(mut self, d: f64) -> Self {
        self.learner.drift = d;
        for o in &mut self.tasks {
            o.drift = None;
        }
        self
    }
}
