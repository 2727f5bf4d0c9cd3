use indexmap::IndexMap;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::weights::{
    requested_count, sample_without_replacement, weights_gap_aware, weights_power_law, SamplerParams, SamplerPolicy,
};
use crate::error::{Error, Result};
use crate::memory::SampleId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BufferParams {
    pub capacity: usize,
    /// Steps between refreshes.
    pub refresh_interval: u64,
    /// Epochs a cached retention may age before a forced refresh.
    pub staleness_cap: u64,
    /// Keep samples of the most recently registered dataset out of the buffer.
    pub exclude_current_dataset: bool,
}

impl Default for BufferParams {
    fn default() -> Self {
        Self { capacity: 1024, refresh_interval: 50, staleness_cap: 10, exclude_current_dataset: false }
    }
}

impl BufferParams {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::range("buffer.capacity", "must be >= 1"));
        }
        if self.refresh_interval == 0 {
            return Err(Error::range("buffer.refresh_interval", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub id: SampleId,
    pub cached_retention: f64,
    pub cached_epoch: u64,
}

/// What a call to [`ReplayBuffer::update`] did.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BufferUpdate {
    pub refreshed: bool,
    pub inserted: usize,
    pub evicted: usize,
    pub stale_refreshed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    params: BufferParams,
    #[serde(with = "indexmap::map::serde_seq")]
    entries: IndexMap<SampleId, BufferEntry>,
}

impl ReplayBuffer {
    pub fn new(params: BufferParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, entries: IndexMap::new() })
    }

    pub fn params(&self) -> &BufferParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: SampleId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = &BufferEntry> {
        self.entries.values()
    }

    pub fn is_refresh_step(&self, step: u64) -> bool {
        step.is_multiple_of(self.params.refresh_interval)
    }

    /// Overwrites the cached retention of a buffered sample, if present.
    pub fn set_cached(&mut self, id: SampleId, retention: f64, epoch: u64) {
        if let Some(e) = self.entries.get_mut(&id) {
            e.cached_retention = retention;
            e.cached_epoch = epoch;
        }
    }

    pub fn remove(&mut self, id: SampleId) -> bool {
        self.entries.shift_remove(&id).is_some()
    }

    /// On refresh steps, or whenever the buffer is empty, merges `candidates`
    /// into the buffer, evicts uniformly at random down to capacity, and
    /// recomputes cached retentions for new and stale entries via `retention`.
    /// Other steps leave the buffer untouched.
    pub fn update<R, F>(
        &mut self,
        candidates: &[SampleId],
        step: u64,
        epoch: u64,
        rng: &mut R,
        mut retention: F,
    ) -> Result<BufferUpdate>
    where
        R: Rng + ?Sized,
        F: FnMut(SampleId) -> Result<f64>,
    {
        let cold = self.entries.is_empty() && !candidates.is_empty();
        if !self.is_refresh_step(step) && !cold {
            return Ok(BufferUpdate::default());
        }
        let mut out = BufferUpdate { refreshed: true, ..Default::default() };
        let before = self.entries.len();
        let mut pool: Vec<(SampleId, Option<BufferEntry>)> = self.entries.values().map(|e| (e.id, Some(*e))).collect();
        let mut seen: std::collections::HashSet<SampleId> = self.entries.keys().copied().collect();
        for &id in candidates {
            if seen.insert(id) {
                pool.push((id, None));
            }
        }
        if pool.len() > self.params.capacity {
            let mut keep = sample_indices(rng, pool.len(), self.params.capacity).into_vec();
            keep.sort_unstable();
            pool = keep.into_iter().map(|i| pool[i]).collect();
        }
        let mut entries = IndexMap::with_capacity(pool.len());
        let mut kept_old = 0;
        for (id, existing) in pool {
            let entry = match existing {
                Some(mut e) => {
                    kept_old += 1;
                    if epoch.saturating_sub(e.cached_epoch) > self.params.staleness_cap {
                        e.cached_retention = retention(id)?;
                        e.cached_epoch = epoch;
                        out.stale_refreshed += 1;
                    }
                    e
                }
                None => {
                    out.inserted += 1;
                    BufferEntry { id, cached_retention: retention(id)?, cached_epoch: epoch }
                }
            };
            entries.insert(id, entry);
        }
        out.evicted = before - kept_old;
        self.entries = entries;
        Ok(out)
    }

    /// Selects `min(round(lambda * batch_size), len)` distinct samples
    /// weighted by the policy over cached retentions. `gap` gives steps since
    /// a sample's last review (used by the gap-aware policy).
    #[allow(clippy::too_many_arguments)]
    pub fn build_decision<R, G>(
        &self,
        lambda: f64,
        batch_size: usize,
        sampler: &SamplerParams,
        rho_gap: f64,
        step: u64,
        cycle: u64,
        rng: &mut R,
        gap: G,
    ) -> Result<ReplayDecision>
    where
        R: Rng + ?Sized,
        G: Fn(SampleId) -> f64,
    {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::invalid("lambda", format!("{lambda} is outside [0, 1]")));
        }
        let requested = requested_count(lambda, batch_size);
        let mut decision = ReplayDecision {
            id: 0,
            step,
            cycle,
            lambda,
            requested,
            selected: Vec::new(),
            policy: sampler.policy,
            warning: None,
        };
        if requested == 0 {
            return Ok(decision);
        }
        if self.entries.is_empty() {
            decision.warning = Some("empty_buffer".into());
            return Ok(decision);
        }
        let n = requested.min(self.entries.len());
        let ids: Vec<SampleId> = self.entries.keys().copied().collect();
        let retentions: Vec<f64> = self.entries.values().map(|e| e.cached_retention).collect();
        let probs = match sampler.policy {
            SamplerPolicy::PowerLaw => weights_power_law(&retentions, sampler.zeta)?,
            SamplerPolicy::GapAware => {
                let gaps: Vec<f64> = ids.iter().map(|id| gap(*id)).collect();
                weights_gap_aware(&retentions, &gaps, sampler.beta_m, rho_gap)?
            }
            SamplerPolicy::Uniform => vec![1.0 / ids.len() as f64; ids.len()],
        };
        decision.selected = sample_without_replacement(&probs, n, rng)?.into_iter().map(|i| ids[i]).collect();
        Ok(decision)
    }
}

/// One replay event's selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayDecision {
    /// Assigned by the engine; 0 when built standalone.
    pub id: u64,
    pub step: u64,
    pub cycle: u64,
    pub lambda: f64,
    /// `round(lambda * batch_size)` before clipping to the buffer size.
    pub requested: usize,
    pub selected: Vec<SampleId>,
    pub policy: SamplerPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ids(range: std::ops::Range<u64>) -> Vec<SampleId> {
        range.map(SampleId).collect()
    }

    #[test]
    fn capacity_enforced() {
        let mut buf = ReplayBuffer::new(BufferParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let up = buf.update(&ids(0..2000), 0, 0, &mut rng, |_| Ok(0.5)).unwrap();
        assert_eq!(buf.len(), 1024);
        assert_eq!(up.inserted, 1024);
    }

    #[test]
    fn off_cadence_is_noop_unless_empty() {
        let mut buf = ReplayBuffer::new(BufferParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Cold fill happens off cadence.
        buf.update(&ids(0..10), 7, 0, &mut rng, |_| Ok(0.5)).unwrap();
        assert_eq!(buf.len(), 10);
        let snapshot = buf.clone();
        let up = buf.update(&ids(10..20), 51, 0, &mut rng, |_| Ok(0.5)).unwrap();
        assert!(!up.refreshed);
        assert_eq!(buf, snapshot);
        buf.update(&ids(10..20), 100, 0, &mut rng, |_| Ok(0.5)).unwrap();
        assert_eq!(buf.len(), 20);
    }

    #[test]
    fn stale_entries_refresh() {
        let mut buf = ReplayBuffer::new(BufferParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        buf.update(&ids(0..2), 0, 0, &mut rng, |_| Ok(0.9)).unwrap();
        buf.set_cached(SampleId(1), 0.9, 5);
        let up = buf.update(&[], 50, 11, &mut rng, |_| Ok(0.1)).unwrap();
        assert_eq!(up.stale_refreshed, 1);
        let cached: Vec<f64> = buf.entries().map(|e| e.cached_retention).collect();
        assert_eq!(cached, vec![0.1, 0.9]);
        // Exactly at the cap is not stale.
        let up = buf.update(&[], 100, 15, &mut rng, |_| Ok(0.2)).unwrap();
        assert_eq!(up.stale_refreshed, 0);
    }

    #[test]
    fn decision_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut buf = ReplayBuffer::new(BufferParams::default()).unwrap();
        let sp = SamplerParams::default();
        let d = buf.build_decision(0.3, 256, &sp, 0.01, 0, 1, &mut rng, |_| 0.0).unwrap();
        assert_eq!(d.warning.as_deref(), Some("empty_buffer"));
        assert!(d.selected.is_empty());

        buf.update(&ids(0..10), 0, 0, &mut rng, |_| Ok(0.5)).unwrap();
        let d = buf.build_decision(0.0, 256, &sp, 0.01, 0, 1, &mut rng, |_| 0.0).unwrap();
        assert!(d.selected.is_empty() && d.warning.is_none());
        let d = buf.build_decision(0.5, 256, &sp, 0.01, 0, 1, &mut rng, |_| 0.0).unwrap();
        assert_eq!(d.requested, 128);
        assert_eq!(d.selected.len(), 10);

        buf.update(&ids(10..500), 50, 0, &mut rng, |_| Ok(0.5)).unwrap();
        let d = buf.build_decision(0.3, 256, &sp, 0.01, 0, 1, &mut rng, |_| 0.0).unwrap();
        assert_eq!(d.selected.len(), 77);
    }

    #[test]
    fn decisions_reproducible() {
        let mut buf = ReplayBuffer::new(BufferParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        buf.update(&ids(0..300), 0, 0, &mut rng, |id| Ok(1.0 / (1.0 + id.0 as f64))).unwrap();
        for policy in [SamplerPolicy::PowerLaw, SamplerPolicy::GapAware, SamplerPolicy::Uniform] {
            let sp = SamplerParams { policy, ..Default::default() };
            let draw = |seed| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                buf.build_decision(0.3, 64, &sp, 0.01, 5, 2, &mut r, |id| id.0 as f64).unwrap()
            };
            assert_eq!(draw(4), draw(4));
        }
    }

    proptest! {
        #[test]
        fn capacity_and_uniqueness_hold(
            seed in any::<u64>(),
            cap in 1usize..64,
            ops in proptest::collection::vec((0u64..200, 0usize..40, any::<bool>()), 1..40),
        ) {
            let params = BufferParams { capacity: cap, refresh_interval: 3, ..Default::default() };
            let mut buf = ReplayBuffer::new(params).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for (step, (start, len, remove)) in ops.into_iter().enumerate() {
                let cands: Vec<SampleId> = (start..start + len as u64).map(SampleId).collect();
                buf.update(&cands, step as u64, step as u64 / 4, &mut rng, |_| Ok(0.5)).unwrap();
                if remove {
                    buf.remove(SampleId(start));
                }
                prop_assert!(buf.len() <= cap);
                let mut seen: Vec<u64> = buf.entries().map(|e| e.id.0).collect();
                seen.sort_unstable();
                seen.dedup();
                prop_assert_eq!(seen.len(), buf.len());
            }
        }
    }
}
