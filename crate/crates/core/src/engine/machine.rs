use std::collections::HashSet;
use std::io::Write;

use indexmap::{IndexMap, IndexSet};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::canonical::to_canonical_string;
use super::config::EngineConfig;
use super::snapshot::{RngState, Snapshot, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::memory::{Horizon, LossNormalizer, SampleId, SampleState};
use crate::sampler::{ReplayBuffer, ReplayDecision};
use crate::scheduler::{
    mean_field_stats, replay_ratio, stability_gain, threshold_interval, ScheduleState, StabilityGain,
};

/// A tracked sample plus its engine bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracked {
    pub state: SampleState,
    /// Index into the engine's dataset tag table.
    pub dataset: u32,
    /// Has reported at least one loss.
    pub exposed: bool,
}

/// Which samples a `mark_replayed` call consolidates.
#[derive(Debug, Clone, PartialEq)]
pub enum MarkTarget {
    Ids(Vec<SampleId>),
    Decision(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkOutcome {
    pub id: SampleId,
    pub m_pre: f64,
    pub delta_s: f64,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub reported: usize,
    pub ema_updated: bool,
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayStatus {
    pub step: u64,
    pub cycle_index: u64,
    pub current_interval: f64,
    /// `None` when the schedule never fires again.
    pub next_trigger_step: Option<u64>,
    pub lambda: f64,
    pub buffer_size: usize,
    pub last_decision: Option<ReplayDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleView {
    pub id: SampleId,
    pub dataset: String,
    pub m: f64,
    pub s: f64,
    pub ema_loss: Option<f64>,
    pub norm_loss: f64,
    pub hazard: f64,
    pub last_review_step: u64,
    pub in_buffer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub step: u64,
    pub epoch: u64,
    pub tracked: usize,
    pub datasets: IndexMap<String, usize>,
    pub mean_m: Option<f64>,
    pub mean_s: Option<f64>,
    pub buffer_size: usize,
    pub cycle_index: u64,
    pub decisions: u64,
    pub config: EngineConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<SampleView>,
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// `replay` or `epoch`.
    pub kind: String,
    pub step: u64,
    pub cycle: u64,
    pub lambda: f64,
    pub selected_count: usize,
    pub mean_m: Option<f64>,
    pub mean_s: Option<f64>,
    pub buffer_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability_gain: Option<StabilityGain>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// The replay engine: a deterministic function of config, seed and the
/// sequence of calls made on it.
pub struct Engine {
    config: EngineConfig,
    samples: IndexMap<SampleId, Tracked>,
    datasets: Vec<String>,
    current_dataset: Option<u32>,
    /// Samples allowed into the buffer, in the order they became eligible.
    eligible: IndexSet<SampleId>,
    normalizer: LossNormalizer,
    schedule: ScheduleState,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    step: u64,
    epoch: u64,
    last_decision: Option<ReplayDecision>,
    decisions_made: u64,
    metrics: Option<Box<dyn Write + Send>>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("step", &self.step)
            .field("epoch", &self.epoch)
            .field("tracked", &self.samples.len())
            .field("buffer", &self.buffer.len())
            .finish_non_exhaustive()
    }
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            normalizer: LossNormalizer::from_params(&config.memory),
            schedule: ScheduleState::new(&config.scheduler, 0)?,
            buffer: ReplayBuffer::new(config.buffer.clone())?,
            rng: ChaCha8Rng::seed_from_u64(config.engine.seed),
            config,
            samples: IndexMap::new(),
            datasets: Vec::new(),
            current_dataset: None,
            eligible: IndexSet::new(),
            step: 0,
            epoch: 0,
            last_decision: None,
            decisions_made: 0,
            metrics: None,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, id: SampleId) -> Option<&SampleState> {
        self.samples.get(&id).map(|t| &t.state)
    }

    /// Live retention of a sample at the current step.
    pub fn retention(&self, id: SampleId) -> Result<f64> {
        self.tracked(id)?.state.retention_at(self.step)
    }

    pub fn schedule(&self) -> &ScheduleState {
        &self.schedule
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn last_decision(&self) -> Option<&ReplayDecision> {
        self.last_decision.as_ref()
    }

    /// Directs metrics records (one JSON object per line) to `sink`.
    pub fn set_metrics_sink(&mut self, sink: Box<dyn Write + Send>) {
        self.metrics = Some(sink);
    }

    pub fn take_metrics_sink(&mut self) -> Option<Box<dyn Write + Send>> {
        self.metrics.take()
    }

    fn tracked(&self, id: SampleId) -> Result<&Tracked> {
        self.samples.get(&id).ok_or(Error::UnknownId(id.0))
    }

    fn is_eligible(&self, t: &Tracked) -> bool {
        t.exposed && !(self.config.buffer.exclude_current_dataset && Some(t.dataset) == self.current_dataset)
    }

    pub fn register_samples(&mut self, ids: &[SampleId], dataset: &str) -> Result<usize> {
        let mut fresh = HashSet::with_capacity(ids.len());
        for id in ids {
            if self.samples.contains_key(id) || !fresh.insert(*id) {
                return Err(Error::DuplicateId(id.0));
            }
        }
        let tag = match self.datasets.iter().position(|d| d == dataset) {
            Some(i) => i as u32,
            None => {
                self.datasets.push(dataset.to_string());
                let tag = (self.datasets.len() - 1) as u32;
                self.switch_dataset(tag);
                tag
            }
        };
        self.samples.reserve(ids.len());
        for &id in ids {
            let state = SampleState::new(id, self.step, &self.config.memory);
            self.samples.insert(id, Tracked { state, dataset: tag, exposed: false });
        }
        Ok(ids.len())
    }

    fn switch_dataset(&mut self, tag: u32) {
        self.current_dataset = Some(tag);
        if self.config.buffer.exclude_current_dataset {
            let newly: Vec<SampleId> =
                self.samples.values().filter(|t| t.exposed && t.dataset != tag).map(|t| t.state.id).collect();
            self.eligible.extend(newly);
        }
        if self.config.scheduler.reset_on_new_dataset {
            self.schedule.reset(&self.config.scheduler, self.step);
        }
    }

    /// Folds losses into the per-sample EMAs and the shared normalizer; at an
    /// epoch boundary also runs the epoch-level hazard update. Everything is
    /// validated before any state changes.
    pub fn report_losses(
        &mut self,
        losses: &[(SampleId, f64)],
        epoch_end: bool,
        replay: bool,
    ) -> Result<ReportSummary> {
        for &(id, loss) in losses {
            self.tracked(id)?;
            if !loss.is_finite() || loss < 0.0 {
                return Err(Error::invalid("loss", format!("sample {id}: loss must be finite and >= 0, got {loss}")));
            }
        }
        let update = !(replay && self.config.engine.exclude_replay_losses);
        if update {
            let mp = &self.config.memory;
            let mut emas = Vec::with_capacity(losses.len());
            for &(id, loss) in losses {
                let t = self.samples.get_mut(&id).expect("validated");
                emas.push(t.state.update_ema_loss(loss, mp)?);
            }
            let norms = self.normalizer.normalize_batch(&emas);
            for (&(id, _), norm) in losses.iter().zip(norms) {
                let t = self.samples.get_mut(&id).expect("validated");
                t.state.norm_loss = norm;
                t.exposed = true;
            }
            for &(id, _) in losses {
                if !self.eligible.contains(&id) && self.is_eligible(&self.samples[&id]) {
                    self.eligible.insert(id);
                }
            }
        }
        if epoch_end {
            self.epoch_boundary()?;
        }
        Ok(ReportSummary { reported: losses.len(), ema_updated: update, epoch: self.epoch })
    }

    pub fn advance_epoch(&mut self) -> Result<u64> {
        self.epoch_boundary()?;
        Ok(self.epoch)
    }

    fn epoch_boundary(&mut self) -> Result<()> {
        let mp = &self.config.memory;
        let step = self.step;
        for t in self.samples.values_mut() {
            let dt = step - t.state.anchor_step;
            if dt > 0 {
                let norm = t.state.norm_loss;
                t.state.epoch_update(norm, dt, mp)?;
            } else {
                t.state.hazard_estimate = t.state.current_hazard(mp)?;
            }
        }
        self.epoch += 1;
        let (mean_m, mean_s) = self.population_means();
        let record = MetricsRecord {
            kind: "epoch".into(),
            step,
            cycle: self.schedule.cycle_index,
            lambda: replay_ratio(step, &self.config.scheduler),
            selected_count: 0,
            mean_m,
            mean_s,
            buffer_size: self.buffer.len(),
            decision_id: None,
            epoch: Some(self.epoch),
            stability_gain: None,
            warning: None,
        };
        self.emit(&record)
    }

    fn population_means(&self) -> (Option<f64>, Option<f64>) {
        if self.samples.is_empty() {
            return (None, None);
        }
        let n = self.samples.len() as f64;
        let (mut m, mut s) = (0.0, 0.0);
        for t in self.samples.values() {
            m += t.state.retention_at(self.step).unwrap_or(t.state.m);
            s += t.state.s;
        }
        (Some(m / n), Some(s / n))
    }

    fn emit(&mut self, record: &MetricsRecord) -> Result<()> {
        if let Some(sink) = self.metrics.as_mut() {
            let line = to_canonical_string(record)?;
            writeln!(sink, "{line}").map_err(Error::from)?;
            sink.flush().map_err(Error::from)?;
        }
        Ok(())
    }

    /// Advances the clock `steps` times and returns every decision made.
    pub fn tick(&mut self, steps: u64) -> Result<Vec<ReplayDecision>> {
        let mut out = Vec::new();
        for _ in 0..steps {
            self.step += 1;
            if let Some(d) = self.step_once()? {
                out.push(d);
            }
        }
        Ok(out)
    }

    fn step_once(&mut self) -> Result<Option<ReplayDecision>> {
        let step = self.step;
        let Engine { config, samples, eligible, schedule, buffer, rng, epoch, .. } = self;

        if buffer.is_refresh_step(step) || (buffer.is_empty() && !eligible.is_empty()) {
            let candidates: Vec<SampleId> = eligible.iter().copied().collect();
            buffer.update(&candidates, step, *epoch, rng, |id| samples[&id].state.retention_at(step))?;
        }

        let elapsed_gap = schedule.current_interval;
        let fired =
            schedule.should_replay(step, &config.scheduler, || threshold_horizon(config, samples, buffer, rng))?;
        let Some(event) = fired else {
            return Ok(None);
        };

        let mut decision = buffer.build_decision(
            event.lambda,
            config.engine.batch_size,
            &config.sampler,
            config.rho_gap(),
            step,
            event.cycle,
            rng,
            |id| (step - samples[&id].state.last_review_step) as f64,
        )?;
        self.decisions_made += 1;
        decision.id = self.decisions_made;

        let gain = self.buffer_gain(elapsed_gap);
        let (mean_m, mean_s) = self.population_means();
        let record = MetricsRecord {
            kind: "replay".into(),
            step,
            cycle: event.cycle,
            lambda: event.lambda,
            selected_count: decision.selected.len(),
            mean_m,
            mean_s,
            buffer_size: self.buffer.len(),
            decision_id: Some(decision.id),
            epoch: None,
            stability_gain: gain,
            warning: decision.warning.clone(),
        };
        self.emit(&record)?;
        self.last_decision = Some(decision.clone());
        Ok(Some(decision))
    }

    fn buffer_gain(&self, gap: f64) -> Option<StabilityGain> {
        if self.buffer.is_empty() {
            return None;
        }
        let n = self.buffer.len() as f64;
        let (mut s, mut m) = (0.0, 0.0);
        for e in self.buffer.entries() {
            let st = &self.samples[&e.id].state;
            s += st.s;
            m += st.retention_at(self.step).unwrap_or(st.m);
        }
        Some(stability_gain(s / n, m / n, gap, &self.config.memory))
    }

    pub fn query_replay(&self) -> ReplayStatus {
        ReplayStatus {
            step: self.step,
            cycle_index: self.schedule.cycle_index,
            current_interval: self.schedule.current_interval,
            next_trigger_step: (self.schedule.next_trigger_step != u64::MAX).then_some(self.schedule.next_trigger_step),
            lambda: replay_ratio(self.step, &self.config.scheduler),
            buffer_size: self.buffer.len(),
            last_decision: self.last_decision.clone(),
        }
    }

    /// Consolidates each sample at the current step.
    pub fn mark_replayed(&mut self, target: MarkTarget) -> Result<Vec<MarkOutcome>> {
        let ids = match target {
            MarkTarget::Decision(id) => match &self.last_decision {
                Some(d) if d.id == id => d.selected.clone(),
                _ => return Err(Error::UnknownDecision(id)),
            },
            MarkTarget::Ids(ids) => ids,
        };
        for id in &ids {
            self.tracked(*id)?;
        }
        if self.config.engine.strict_mark {
            let allowed: HashSet<SampleId> =
                self.last_decision.as_ref().map(|d| d.selected.iter().copied().collect()).unwrap_or_default();
            if let Some(bad) = ids.iter().find(|id| !allowed.contains(id)) {
                return Err(Error::NotInDecision(bad.0));
            }
        }
        let step = self.step;
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            let t = self.samples.get_mut(&id).expect("validated");
            t.state.materialize(step)?;
            let c = t.state.consolidate(step, &self.config.memory, &mut self.rng)?;
            out.push(MarkOutcome { id, m_pre: c.m_pre, delta_s: c.delta_s, s: t.state.s });
            self.buffer.set_cached(id, 1.0, self.epoch);
        }
        Ok(out)
    }

    pub fn stats(&self, ids: Option<&[SampleId]>) -> Result<Stats> {
        let mut datasets: IndexMap<String, usize> = self.datasets.iter().map(|d| (d.clone(), 0)).collect();
        for t in self.samples.values() {
            datasets[t.dataset as usize] += 1;
        }
        let mut views = Vec::new();
        for &id in ids.unwrap_or(&[]) {
            let t = self.tracked(id)?;
            views.push(SampleView {
                id,
                dataset: self.datasets[t.dataset as usize].clone(),
                m: t.state.retention_at(self.step)?,
                s: t.state.s,
                ema_loss: t.state.ema_loss,
                norm_loss: t.state.norm_loss,
                hazard: t.state.hazard_estimate,
                last_review_step: t.state.last_review_step,
                in_buffer: self.buffer.contains(id),
            });
        }
        let (mean_m, mean_s) = self.population_means();
        Ok(Stats {
            step: self.step,
            epoch: self.epoch,
            tracked: self.samples.len(),
            datasets,
            mean_m,
            mean_s,
            buffer_size: self.buffer.len(),
            cycle_index: self.schedule.cycle_index,
            decisions: self.decisions_made,
            config: self.config.clone(),
            samples: views,
        })
    }

    /// Checks the range invariants of every sample and the buffer.
    pub fn check_invariants(&self) -> Result<()> {
        for t in self.samples.values() {
            t.state.check_invariants(&self.config.memory)?;
        }
        if self.buffer.len() > self.buffer.params().capacity {
            return Err(Error::range("buffer", "exceeds capacity"));
        }
        for e in self.buffer.entries() {
            if !self.samples.contains_key(&e.id) {
                return Err(Error::UnknownId(e.id.0));
            }
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            step: self.step,
            epoch: self.epoch,
            samples: self.samples.values().cloned().collect(),
            datasets: self.datasets.clone(),
            current_dataset: self.current_dataset,
            eligible: self.eligible.iter().copied().collect(),
            normalizer: self.normalizer.clone(),
            schedule: self.schedule.clone(),
            buffer: self.buffer.clone(),
            rng: RngState::capture(&self.rng),
            last_decision: self.last_decision.clone(),
            decisions_made: self.decisions_made,
        }
    }

    /// Builds an engine from a snapshot. The metrics sink is not part of
    /// the snapshot.
    pub fn from_snapshot(snap: Snapshot) -> Result<Self> {
        if snap.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch { found: snap.format_version, expected: FORMAT_VERSION });
        }
        let corrupt = |e: Error| Error::CorruptSnapshot(e.to_string());
        snap.config.validate().map_err(corrupt)?;
        let mut samples = IndexMap::with_capacity(snap.samples.len());
        for t in snap.samples {
            if t.dataset as usize >= snap.datasets.len() {
                return Err(Error::CorruptSnapshot(format!("sample {} has unknown dataset", t.state.id)));
            }
            let id = t.state.id;
            if samples.insert(id, t).is_some() {
                return Err(Error::CorruptSnapshot(format!("duplicate sample {id}")));
            }
        }
        if snap.eligible.iter().any(|id| !samples.contains_key(id)) {
            return Err(Error::CorruptSnapshot("eligible set names an unknown sample".into()));
        }
        let engine = Self {
            config: snap.config,
            samples,
            datasets: snap.datasets,
            current_dataset: snap.current_dataset,
            eligible: snap.eligible.into_iter().collect(),
            normalizer: snap.normalizer,
            schedule: snap.schedule,
            buffer: snap.buffer,
            rng: snap.rng.restore().map_err(corrupt)?,
            step: snap.step,
            epoch: snap.epoch,
            last_decision: snap.last_decision,
            decisions_made: snap.decisions_made,
            metrics: None,
        };
        engine.check_invariants().map_err(corrupt)?;
        Ok(engine)
    }

    /// Replaces this engine's state with `snap`, keeping the metrics sink.
    pub fn restore(&mut self, snap: Snapshot) -> Result<()> {
        let mut next = Self::from_snapshot(snap)?;
        next.metrics = self.metrics.take();
        *self = next;
        Ok(())
    }
}

/// Next gap in threshold mode from mean-field statistics of the buffer
/// population (all tracked samples when the buffer is empty).
fn threshold_horizon(
    config: &EngineConfig,
    samples: &IndexMap<SampleId, Tracked>,
    buffer: &ReplayBuffer,
    rng: &mut ChaCha8Rng,
) -> Result<Horizon> {
    let ids: Vec<SampleId> =
        if buffer.is_empty() { samples.keys().copied().collect() } else { buffer.entries().map(|e| e.id).collect() };
    if ids.is_empty() {
        return Ok(Horizon::Steps(config.scheduler.initial_interval));
    }
    let cap = config.scheduler.stats_sample_cap;
    let chosen: Vec<SampleId> = if ids.len() > cap {
        let mut idx = sample_indices(rng, ids.len(), cap).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| ids[i]).collect()
    } else {
        ids
    };
    let stats = mean_field_stats(chosen.iter().map(|id| &samples[id].state), &config.memory)?;
    threshold_interval(&stats, config.scheduler.theta)
}
