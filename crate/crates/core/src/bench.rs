//! Timing harness over synthetic populations.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::engine::{Engine, EngineConfig};
use crate::error::Result;
use crate::memory::SampleId;
use crate::sampler::{ReplayBuffer, SamplerParams};

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub name: &'static str,
    pub size: usize,
    pub runs: usize,
    pub min_ms: f64,
    pub median_ms: f64,
    pub max_ms: f64,
    pub bound_ms: f64,
}

impl Timing {
    fn from_samples(name: &'static str, size: usize, bound_ms: f64, mut times: Vec<Duration>) -> Self {
        times.sort();
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        Self {
            name,
            size,
            runs: times.len(),
            min_ms: ms(times[0]),
            median_ms: ms(times[times.len() / 2]),
            max_ms: ms(times[times.len() - 1]),
            bound_ms,
        }
    }

    /// Judged on the median run.
    pub fn within_bound(&self) -> bool {
        self.median_ms < self.bound_ms
    }
}

/// Epoch boundary over `samples` tracked samples with random losses.
pub fn epoch_update(samples: usize, runs: usize, seed: u64) -> Result<Timing> {
    let mut engine = Engine::new(EngineConfig::default())?;
    let ids: Vec<SampleId> = (0..samples as u64).map(SampleId).collect();
    engine.register_samples(&ids, "bench")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for chunk in ids.chunks(4096) {
        let losses: Vec<(SampleId, f64)> = chunk.iter().map(|&id| (id, rng.random_range(0.0..3.0))).collect();
        engine.report_losses(&losses, false, false)?;
    }
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs.max(1) {
        engine.tick(1)?;
        let t = Instant::now();
        engine.advance_epoch()?;
        times.push(t.elapsed());
    }
    Ok(Timing::from_samples("epoch_update", samples, 100.0, times))
}

/// One power-law decision selecting `select` ids from a full buffer of `capacity`.
pub fn decision(capacity: usize, select: usize, runs: usize, seed: u64) -> Result<Timing> {
    let config = EngineConfig::default();
    let mut params = config.buffer.clone();
    params.capacity = capacity;
    let mut buffer = ReplayBuffer::new(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<SampleId> = (0..capacity as u64).map(SampleId).collect();
    buffer.update(&ids, 0, 0, &mut rng, |_| Ok(0.0))?;
    for &id in &ids {
        buffer.set_cached(id, rng.random_range(0.01..1.0), 0);
    }
    let sampler = SamplerParams::default();
    let mut times = Vec::with_capacity(runs);
    for run in 0..runs.max(1) {
        let t = Instant::now();
        let d = buffer.build_decision(1.0, select, &sampler, config.rho_gap(), run as u64, 0, &mut rng, |_| 0.0)?;
        times.push(t.elapsed());
        debug_assert_eq!(d.selected.len(), select.min(capacity));
    }
    Ok(Timing::from_samples("decision", capacity, 1.0, times))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_runs_report() {
        let e = epoch_update(1000, 3, 0).unwrap();
        assert_eq!((e.name, e.size, e.runs), ("epoch_update", 1000, 3));
        assert!(e.min_ms <= e.median_ms && e.median_ms <= e.max_ms);
        let d = decision(64, 16, 5, 0).unwrap();
        assert_eq!(d.runs, 5);
    }
}
