//! Synthetic continual-learning simulator: a surrogate learner trained over a
//! task sequence, with replay driven by baseline triggers or by the engine.

pub mod compare;
pub mod error;
pub mod learner;
pub mod metrics;
pub mod run;
pub mod scenario;
pub mod strategy;

pub use compare::{compare_strategies, compare_strategies_with, ComparisonRow, ComparisonTable};
pub use error::{Result, SimError};
pub use learner::{learner_drift, learner_train, observed_loss, LearnerState, SyntheticTask};
pub use metrics::{forgetting_metric, PerformanceMatrix};
pub use run::{run_strategy, ForgettingReport, ReplayEvent, RunOutput, Simulator, StageRecord};
pub use scenario::ScenarioConfig;
pub use strategy::{StrategyConfig, StrategyKind};
