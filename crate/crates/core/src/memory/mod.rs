//! Per-sample retention dynamics.
//!
//! Each tracked sample carries a memory strength `m` that decays as
//! `m <- m * exp(-h)` under the hazard `h = (alpha + gamma_d * phi(l)) / s`,
//! where `l` is the sample's quantile-normalized EMA loss and `s` its
//! stability. Reviews reset `m` to one and grow `s` with a saturating gain
//! that shrinks with the review gap and grows with the amount forgotten.

mod analysis;
mod normalizer;
mod params;
mod state;

pub(crate) use analysis::check_theta;
pub use analysis::{riemann_gap, time_to_threshold, Horizon, RiemannGap};
pub use normalizer::{normalize_with, quantile_sorted, LossNormalizer, NEUTRAL_LOSS};
pub use params::{MemoryParams, PhiConfig, PhiKind};
pub use state::{hazard, hazard_with_alpha, Consolidation, SampleId, SampleState, M_FLOOR};
