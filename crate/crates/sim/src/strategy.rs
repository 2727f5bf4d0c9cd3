use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use spacedreplay_core::sampler::SamplerPolicy;
use spacedreplay_core::scheduler::ScheduleMode;
use spacedreplay_core::EngineConfig;

use crate::error::SimError;
use crate::scenario::ScenarioConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    None,
    Fixed,
    LossTrigger,
    AccuracyTrigger,
    Geometric,
    EbbinghausSequence,
    MssrSch,
    MssrSpl,
    MssrFull,
    /// Upper bound: every prior sample is retrained on every step.
    FullReplay,
}

impl StrategyKind {
    /// Everything `simulate --strategy all` runs.
    pub const ALL: [StrategyKind; 10] = [
        StrategyKind::None,
        StrategyKind::Fixed,
        StrategyKind::LossTrigger,
        StrategyKind::AccuracyTrigger,
        StrategyKind::Geometric,
        StrategyKind::EbbinghausSequence,
        StrategyKind::MssrSch,
        StrategyKind::MssrSpl,
        StrategyKind::MssrFull,
        StrategyKind::FullReplay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::None => "none",
            StrategyKind::Fixed => "fixed",
            StrategyKind::LossTrigger => "loss_trigger",
            StrategyKind::AccuracyTrigger => "accuracy_trigger",
            StrategyKind::Geometric => "geometric",
            StrategyKind::EbbinghausSequence => "ebbinghaus_sequence",
            StrategyKind::MssrSch => "mssr_sch",
            StrategyKind::MssrSpl => "mssr_spl",
            StrategyKind::MssrFull => "mssr_full",
            StrategyKind::FullReplay => "full_replay",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| SimError::UnknownStrategy(s.to_string()))
    }
}

/// A fully resolved strategy. Baselines replay `round(ratio * batch)` prior
/// samples per event, drawn uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyConfig {
    None,
    Fixed { interval: u64, ratio: f64 },
    LossTrigger { threshold: f64, noise: f64, ema_beta: f64, ratio: f64 },
    AccuracyTrigger { drop: f64, eval_every: u64, ratio: f64 },
    Engine { variant: StrategyKind, config: Box<EngineConfig> },
    FullReplay,
}

impl StrategyConfig {
    pub fn from_scenario(kind: StrategyKind, scenario: &ScenarioConfig, seed: u64) -> Self {
        let b = &scenario.baselines;
        let engine = |mode: ScheduleMode, policy: SamplerPolicy, f: &dyn Fn(&mut EngineConfig)| {
            let mut c = scenario.engine.clone();
            c.engine.batch_size = scenario.run.batch_size;
            c.engine.seed = seed;
            c.scheduler.mode = mode;
            c.scheduler.reset_on_new_dataset = true;
            c.buffer.exclude_current_dataset = true;
            c.sampler.policy = policy;
            f(&mut c);
            StrategyConfig::Engine { variant: kind, config: Box::new(c) }
        };
        let sampler = scenario.engine.sampler.policy;
        // Interval patterns run at the baseline ratio so only spacing differs.
        let sequence = |c: &mut EngineConfig, seq: &[f64]| {
            c.scheduler.explicit_intervals = seq.to_vec();
            c.scheduler.lambda0 = b.replay_ratio;
            c.scheduler.lambda_min = b.replay_ratio;
        };
        match kind {
            StrategyKind::None => StrategyConfig::None,
            StrategyKind::Fixed => StrategyConfig::Fixed { interval: b.fixed_interval, ratio: b.replay_ratio },
            StrategyKind::LossTrigger => StrategyConfig::LossTrigger {
                threshold: b.loss_threshold,
                noise: b.loss_noise,
                ema_beta: b.loss_ema_beta,
                ratio: b.replay_ratio,
            },
            StrategyKind::AccuracyTrigger => StrategyConfig::AccuracyTrigger {
                drop: b.accuracy_drop,
                eval_every: b.eval_every,
                ratio: b.replay_ratio,
            },
            StrategyKind::Geometric => engine(ScheduleMode::ExplicitSequence, sampler, &|c| sequence(c, &b.geometric)),
            StrategyKind::EbbinghausSequence => {
                engine(ScheduleMode::ExplicitSequence, sampler, &|c| sequence(c, &b.ebbinghaus))
            }
            StrategyKind::MssrSch => engine(ScheduleMode::Expanding, SamplerPolicy::Uniform, &|_| {}),
            StrategyKind::MssrSpl => engine(ScheduleMode::Fixed, sampler, &|c| {
                c.scheduler.initial_interval = b.fixed_interval as f64;
            }),
            StrategyKind::MssrFull => engine(ScheduleMode::Expanding, sampler, &|_| {}),
            StrategyKind::FullReplay => StrategyConfig::FullReplay,
        }
    }

    pub fn kind(&self) -> StrategyKind {
        match self {
            StrategyConfig::None => StrategyKind::None,
            StrategyConfig::Fixed { .. } => StrategyKind::Fixed,
            StrategyConfig::LossTrigger { .. } => StrategyKind::LossTrigger,
            StrategyConfig::AccuracyTrigger { .. } => StrategyKind::AccuracyTrigger,
            StrategyConfig::Engine { variant, .. } => *variant,
            StrategyConfig::FullReplay => StrategyKind::FullReplay,
        }
    }
}
