use std::io::Write;
use std::sync::{Arc, Mutex};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;
use spacedreplay_core::sampler::requested_count;
use spacedreplay_core::{Engine, SampleId};

use crate::error::{Result, SimError};
use crate::learner::{observed_loss, LearnerState, SyntheticTask};
use crate::metrics::{forgetting_metric, PerformanceMatrix};
use crate::scenario::ScenarioConfig;
use crate::strategy::{StrategyConfig, StrategyKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEvent {
    pub step: u64,
    pub stage: usize,
    /// Step within the stage, starting at 1.
    pub stage_step: u64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    /// Accuracy of tasks `0..=stage`.
    pub accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub end_step: u64,
    /// Accuracy of tasks `0..=stage` at the end of the stage.
    pub accuracy: Vec<f64>,
    pub curve: Vec<CurvePoint>,
    pub replay_events: usize,
    pub replay_volume: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingReport {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub matrix: PerformanceMatrix,
    pub forgetting: f64,
    pub forgetting_clamped: f64,
    pub final_accuracy: Vec<f64>,
    pub stages: Vec<StageRecord>,
    /// Every event the strategy fired, including ones with nothing to replay.
    pub events: Vec<ReplayEvent>,
    pub replay_events: usize,
    pub replay_volume: u64,
    /// Samples scored by the strategy's own evaluations.
    pub eval_samples: u64,
    /// First step at which some earlier task sat below its end-of-stage accuracy.
    pub first_drop_step: Option<u64>,
    /// First event that replayed anything.
    pub first_trigger_step: Option<u64>,
}

pub struct RunOutput {
    pub report: ForgettingReport,
    /// JSON lines: engine records (engine-backed strategies) plus `applied_replay`
    /// and `stage_end` records from the simulator.
    pub metrics: Vec<u8>,
}

#[derive(Clone, Default)]
struct SharedSink(Arc<Mutex<Vec<u8>>>);

impl Write for SharedSink {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

enum Controller {
    None,
    Fixed { interval: u64, count: usize, subset: Vec<usize> },
    Loss { threshold: f64, noise: f64, beta: f64, count: usize, ema: Option<f64> },
    Accuracy { drop: f64, every: u64, count: usize, best: Vec<f64> },
    Engine(Box<Engine>),
    Full,
}

struct StepContext<'a> {
    stage: usize,
    stage_step: u64,
    batch: &'a [usize],
    losses: &'a [f64],
    epoch_end: bool,
}

pub struct Simulator {
    scenario: ScenarioConfig,
    tasks: Vec<SyntheticTask>,
    offsets: Vec<usize>,
    learner: LearnerState,
    strategy: StrategyKind,
    controller: Controller,
    order_rng: ChaCha8Rng,
    strategy_rng: ChaCha8Rng,
    seed: u64,
    step: u64,
    stages_done: usize,
    matrix: PerformanceMatrix,
    stages: Vec<StageRecord>,
    events: Vec<ReplayEvent>,
    eval_samples: u64,
    first_drop_step: Option<u64>,
    sink: SharedSink,
    trained: Vec<bool>,
}

fn task_accuracy(learner: &LearnerState, range: std::ops::Range<usize>, threshold: Option<f64>) -> f64 {
    match threshold {
        None => learner.mean_q(range),
        Some(th) => {
            let n = range.len() as f64;
            learner.q[range].iter().filter(|q| **q >= th).count() as f64 / n
        }
    }
}

fn stream(seed: u64, n: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(n);
    rng
}

impl Simulator {
    pub fn new(scenario: &ScenarioConfig, strategy: StrategyConfig, seed: u64) -> Result<Self> {
        scenario.validate()?;
        let tasks = scenario.task_list();
        let mut offsets = vec![0];
        for t in &tasks {
            offsets.push(offsets.last().unwrap() + t.samples);
        }
        let learner = LearnerState::new(&tasks, &mut stream(seed, 0));
        let batch = scenario.run.batch_size;
        let sink = SharedSink::default();
        let kind = strategy.kind();
        let controller = match strategy {
            StrategyConfig::None => Controller::None,
            StrategyConfig::Fixed { interval, ratio } => Controller::Fixed {
                interval: interval.max(1),
                count: requested_count(ratio, batch),
                subset: Vec::new(),
            },
            StrategyConfig::LossTrigger { threshold, noise, ema_beta, ratio } => {
                Controller::Loss { threshold, noise, beta: ema_beta, count: requested_count(ratio, batch), ema: None }
            }
            StrategyConfig::AccuracyTrigger { drop, eval_every, ratio } => Controller::Accuracy {
                drop,
                every: eval_every.max(1),
                count: requested_count(ratio, batch),
                best: Vec::new(),
            },
            StrategyConfig::Engine { config, .. } => {
                let mut engine = Engine::new(*config)?;
                engine.set_metrics_sink(Box::new(sink.clone()));
                Controller::Engine(Box::new(engine))
            }
            StrategyConfig::FullReplay => Controller::Full,
        };
        let n = learner.len();
        Ok(Self {
            matrix: PerformanceMatrix::new(tasks.len()),
            scenario: scenario.clone(),
            tasks,
            offsets,
            learner,
            strategy: kind,
            controller,
            order_rng: stream(seed, 1),
            strategy_rng: stream(seed, 2),
            seed,
            step: 0,
            stages_done: 0,
            stages: Vec::new(),
            events: Vec::new(),
            eval_samples: 0,
            first_drop_step: None,
            sink,
            trained: vec![false; n],
        })
    }

    pub fn learner(&self) -> &LearnerState {
        &self.learner
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Task accuracy: mean skill, or the fraction above the configured threshold.
    pub fn accuracy(&self, task: usize) -> f64 {
        task_accuracy(&self.learner, self.offsets[task]..self.offsets[task + 1], self.scenario.run.accuracy_threshold)
    }

    fn emit(&self, record: serde_json::Value) {
        let mut sink = self.sink.clone();
        let _ = writeln!(sink, "{record}");
    }

    /// Runs the next stage in sequence.
    pub fn stage_run(&mut self, stage: usize) -> Result<StageRecord> {
        if stage != self.stages_done || stage >= self.tasks.len() {
            return Err(SimError::Scenario(format!("stage {stage} out of order (next is {})", self.stages_done)));
        }
        let run = self.scenario.run.clone();
        let current = self.offsets[stage]..self.offsets[stage + 1];
        let prior = self.offsets[stage];

        if let Controller::Engine(engine) = &mut self.controller {
            let ids: Vec<SampleId> = current.clone().map(|i| SampleId(i as u64)).collect();
            engine.register_samples(&ids, &format!("task{stage}"))?;
        }
        if let Controller::Fixed { count, subset, .. } = &mut self.controller {
            *subset = if prior > 0 {
                index::sample(&mut self.strategy_rng, prior, (*count).min(prior)).into_vec()
            } else {
                Vec::new()
            };
        }

        let mut order: Vec<usize> = current.clone().collect();
        order.shuffle(&mut self.order_rng);
        let mut cursor = 0;
        let mut curve = Vec::new();
        let events_before = self.events.len();

        for j in 1..=run.steps_per_stage {
            self.step += 1;
            if cursor + run.batch_size > order.len() {
                order.shuffle(&mut self.order_rng);
                cursor = 0;
            }
            let batch: Vec<usize> = order[cursor..cursor + run.batch_size].to_vec();
            cursor += run.batch_size;

            let losses: Vec<f64> = batch.iter().map(|&i| observed_loss(self.learner.q[i])).collect();
            self.learner.train(&batch);
            for &i in &batch {
                self.trained[i] = true;
            }
            self.learner.drift_untrained(&self.trained);
            for &i in &batch {
                self.trained[i] = false;
            }

            let ctx = StepContext {
                stage,
                stage_step: j,
                batch: &batch,
                losses: &losses,
                epoch_end: j.is_multiple_of(run.epoch_steps),
            };
            if let Some(ids) = self.decide(&ctx)? {
                self.apply_replay(&ids)?;
                self.events.push(ReplayEvent { step: self.step, stage, stage_step: j, count: ids.len() });
                if !ids.is_empty() {
                    self.emit(json!({"kind": "applied_replay", "step": self.step, "stage": stage, "count": ids.len()}));
                }
            }

            if self.first_drop_step.is_none() {
                let dropped = (0..stage).any(|i| self.accuracy(i) < self.matrix.get(i, i).unwrap_or(f64::NEG_INFINITY));
                if dropped {
                    self.first_drop_step = Some(self.step);
                }
            }
            if j.is_multiple_of(run.curve_every) {
                curve.push(CurvePoint { step: self.step, accuracy: (0..=stage).map(|i| self.accuracy(i)).collect() });
            }
        }

        let accuracy: Vec<f64> = (0..=stage).map(|i| self.accuracy(i)).collect();
        for (i, a) in accuracy.iter().enumerate() {
            self.matrix.set(stage, i, *a);
        }
        if let Controller::Accuracy { best, .. } = &mut self.controller {
            best.push(accuracy[stage]);
        }
        let new_events = &self.events[events_before..];
        let record = StageRecord {
            stage,
            end_step: self.step,
            accuracy,
            curve,
            replay_events: new_events.iter().filter(|e| e.count > 0).count(),
            replay_volume: new_events.iter().map(|e| e.count as u64).sum(),
        };
        self.emit(json!({"kind": "stage_end", "step": self.step, "stage": stage, "accuracy": record.accuracy}));
        self.stages_done += 1;
        self.stages.push(record.clone());
        Ok(record)
    }

    /// Ids to replay this step, or `None` when no event fired.
    fn decide(&mut self, ctx: &StepContext<'_>) -> Result<Option<Vec<usize>>> {
        let prior = self.offsets[ctx.stage];
        let uniform = |rng: &mut ChaCha8Rng, count: usize| index::sample(rng, prior, count.min(prior)).into_vec();
        match &mut self.controller {
            Controller::None => Ok(None),
            Controller::Fixed { interval, subset, .. } => {
                Ok((prior > 0 && ctx.stage_step.is_multiple_of(*interval)).then(|| subset.clone()))
            }
            Controller::Loss { threshold, noise, beta, count, ema } => {
                let mean = ctx.losses.iter().sum::<f64>() / ctx.losses.len() as f64;
                let eps: f64 = StandardNormal.sample(&mut self.strategy_rng);
                let signal = mean + *noise * eps;
                let fire = prior > 0 && ema.is_some_and(|e| signal > e * (1.0 + *threshold));
                *ema = Some(match *ema {
                    None => signal,
                    Some(e) => *beta * e + (1.0 - *beta) * signal,
                });
                Ok(fire.then(|| uniform(&mut self.strategy_rng, *count)))
            }
            Controller::Accuracy { drop, every, count, best } => {
                if prior == 0 || !ctx.stage_step.is_multiple_of(*every) {
                    return Ok(None);
                }
                let (drop, count) = (*drop, *count);
                let mut fire = false;
                for (i, peak) in best.iter_mut().enumerate().take(ctx.stage) {
                    let range = self.offsets[i]..self.offsets[i + 1];
                    self.eval_samples += range.len() as u64;
                    let acc = task_accuracy(&self.learner, range, self.scenario.run.accuracy_threshold);
                    if *peak - acc > drop {
                        fire = true;
                    }
                    *peak = peak.max(acc);
                }
                Ok(fire.then(|| uniform(&mut self.strategy_rng, count)))
            }
            Controller::Engine(engine) => {
                let report: Vec<(SampleId, f64)> =
                    ctx.batch.iter().zip(ctx.losses).map(|(&i, &l)| (SampleId(i as u64), l)).collect();
                engine.report_losses(&report, ctx.epoch_end, false)?;
                let decisions = engine.tick(1)?;
                Ok(decisions.last().map(|d| d.selected.iter().map(|id| id.0 as usize).collect()))
            }
            Controller::Full => Ok((prior > 0).then(|| (0..prior).collect())),
        }
    }

    fn apply_replay(&mut self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Ok(());
        }
        let losses: Vec<f64> = ids.iter().map(|&i| observed_loss(self.learner.q[i])).collect();
        self.learner.train(ids);
        if let Controller::Engine(engine) = &mut self.controller {
            let report: Vec<(SampleId, f64)> =
                ids.iter().zip(&losses).map(|(&i, &l)| (SampleId(i as u64), l)).collect();
            engine.report_losses(&report, false, true)?;
            let sids: Vec<SampleId> = ids.iter().map(|&i| SampleId(i as u64)).collect();
            engine.mark_replayed(spacedreplay_core::engine::MarkTarget::Ids(sids))?;
        }
        Ok(())
    }

    pub fn finish(self) -> Result<RunOutput> {
        let forgetting = forgetting_metric(&self.matrix)?;
        let final_accuracy = self.matrix.final_accuracies().into_iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        let replay_events = self.events.iter().filter(|e| e.count > 0).count();
        let report = ForgettingReport {
            strategy: self.strategy,
            seed: self.seed,
            forgetting,
            forgetting_clamped: forgetting.max(0.0),
            final_accuracy,
            replay_events,
            replay_volume: self.events.iter().map(|e| e.count as u64).sum(),
            first_trigger_step: self.events.iter().find(|e| e.count > 0).map(|e| e.step),
            matrix: self.matrix,
            stages: self.stages,
            events: self.events,
            eval_samples: self.eval_samples,
            first_drop_step: self.first_drop_step,
        };
        drop(self.controller);
        let metrics = std::mem::take(&mut *self.sink.0.lock().unwrap());
        Ok(RunOutput { report, metrics })
    }
}

/// One full run of `kind` on `scenario` with `seed`.
pub fn run_strategy(scenario: &ScenarioConfig, kind: StrategyKind, seed: u64) -> Result<RunOutput> {
    let strategy = StrategyConfig::from_scenario(kind, scenario, seed);
    let mut sim = Simulator::new(scenario, strategy, seed)?;
    for stage in 0..scenario.run.tasks {
        sim.stage_run(stage)?;
    }
    sim.finish()
}
