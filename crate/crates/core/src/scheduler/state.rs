use serde::{Deserialize, Serialize};

use super::params::{replay_ratio, ScheduleMode, SchedulerParams};
use crate::error::{Error, Result};
use crate::memory::Horizon;

/// One fired replay event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiredEvent {
    /// Cycle index after firing; the first event is cycle 1.
    pub cycle: u64,
    pub step: u64,
    pub lambda: f64,
}

/// Expansion `interval * (1 + eta_p * exp(-rho_p * k))`.
pub fn expand_interval(interval: f64, k: u64, params: &SchedulerParams) -> f64 {
    interval * (1.0 + params.eta_p * (-params.rho_p * k as f64).exp())
}

fn ceil_steps(interval: f64) -> u64 {
    // Sub-step gaps still advance by one so triggers strictly increase.
    (interval.ceil() as u64).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub cycle_index: u64,
    /// Gap to the next event, kept real-valued.
    pub current_interval: f64,
    pub next_trigger_step: u64,
    pub fired_events: Vec<FiredEvent>,
    /// Step the current cycle sequence started from.
    pub origin_step: u64,
    pub last_step: Option<u64>,
}

impl ScheduleState {
    pub fn new(params: &SchedulerParams, origin_step: u64) -> Result<Self> {
        params.validate()?;
        let interval = first_interval(params);
        Ok(Self {
            cycle_index: 0,
            current_interval: interval,
            next_trigger_step: origin_step.saturating_add(ceil_steps(interval)),
            fired_events: Vec::new(),
            origin_step,
            last_step: None,
        })
    }

    /// Restarts the cycle sequence at `origin_step`. The event log is kept.
    pub fn reset(&mut self, params: &SchedulerParams, origin_step: u64) {
        let interval = first_interval(params);
        self.cycle_index = 0;
        self.current_interval = interval;
        self.next_trigger_step = origin_step.saturating_add(ceil_steps(interval));
        self.origin_step = origin_step;
    }

    /// Interval after the current one in expanding mode, using `k = cycle_index`.
    pub fn next_interval(&self, params: &SchedulerParams) -> Result<f64> {
        if params.mode != ScheduleMode::Expanding {
            return Err(Error::WrongMode { expected: "expanding" });
        }
        Ok(expand_interval(self.current_interval, self.cycle_index, params))
    }

    /// Fires when `step >= next_trigger_step`. `threshold` is consulted only
    /// in threshold mode and only on firing.
    pub fn should_replay<F>(&mut self, step: u64, params: &SchedulerParams, threshold: F) -> Result<Option<FiredEvent>>
    where
        F: FnOnce() -> Result<Horizon>,
    {
        if let Some(prev) = self.last_step {
            if step < prev {
                return Err(Error::StepRegression { previous: prev, requested: step });
            }
        }
        self.last_step = Some(step);
        if step < self.next_trigger_step {
            return Ok(None);
        }
        let event = FiredEvent { cycle: self.cycle_index + 1, step, lambda: replay_ratio(step, params) };
        self.cycle_index += 1;
        let next = match params.mode {
            ScheduleMode::Expanding => Some(self.next_interval(params)?),
            ScheduleMode::Fixed => Some(params.initial_interval),
            ScheduleMode::ExplicitSequence => {
                let seq = &params.explicit_intervals;
                let idx = (self.cycle_index as usize).min(seq.len() - 1);
                Some(seq[idx])
            }
            ScheduleMode::Threshold => threshold()?.steps(),
        };
        match next {
            Some(interval) => {
                self.current_interval = interval;
                self.next_trigger_step = step.saturating_add(ceil_steps(interval));
            }
            None => self.next_trigger_step = u64::MAX,
        }
        self.fired_events.push(event);
        Ok(Some(event))
    }
}

fn first_interval(params: &SchedulerParams) -> f64 {
    match params.mode {
        ScheduleMode::ExplicitSequence => params.explicit_intervals.first().copied().unwrap_or(params.initial_interval),
        _ => params.initial_interval,
    }
}
