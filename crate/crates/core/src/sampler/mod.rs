//! Replay buffer management and prioritized selection.

mod buffer;
mod weights;

pub use buffer::{BufferEntry, BufferParams, BufferUpdate, ReplayBuffer, ReplayDecision};
pub use weights::{
    requested_count, sample_without_replacement, weights_gap_aware, weights_power_law, SamplerParams, SamplerPolicy,
};
