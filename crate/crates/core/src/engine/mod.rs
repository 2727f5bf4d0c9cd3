//! Deterministic engine state machine, configuration, snapshots and the
//! line-delimited JSON protocol.

mod canonical;
mod config;
mod machine;
mod protocol;
mod snapshot;

pub use canonical::to_canonical_string;
pub use config::{EngineConfig, EngineSettings};
pub use machine::{
    Engine, MarkOutcome, MarkTarget, MetricsRecord, ReplayStatus, ReportSummary, SampleView, Stats, Tracked,
};
pub use protocol::{Request, OPS};
pub use snapshot::{RngState, Snapshot, FORMAT_VERSION};
