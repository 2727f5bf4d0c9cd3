//! Dataset-level replay timing and replay-ratio decay.

mod meanfield;
mod params;
mod state;

pub use meanfield::{
    mean_field_stats, optimal_ratio, stability_gain, threshold_interval, MeanFieldStats, StabilityGain,
};
pub use params::{replay_ratio, RatioForm, ScheduleMode, SchedulerParams};
pub use state::{expand_interval, FiredEvent, ScheduleState};
