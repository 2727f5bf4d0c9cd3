//! Memory-aware replay scheduling for continual fine-tuning.
//!
//! [`memory`] tracks per-sample retention, [`scheduler`] decides when replay
//! fires and how large it is, [`sampler`] picks which samples to replay and
//! [`engine`] ties them into a deterministic request/response state machine.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod engine;
pub mod error;
pub mod memory;
pub mod sampler;
pub mod scheduler;

pub use engine::{Engine, EngineConfig};
pub use error::{Error, Result};
pub use memory::SampleId;
