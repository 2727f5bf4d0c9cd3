use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::run::{run_strategy, ForgettingReport, RunOutput};
use crate::scenario::ScenarioConfig;
use crate::strategy::StrategyKind;

/// Per-strategy means over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: StrategyKind,
    pub seeds: usize,
    pub forgetting: f64,
    pub forgetting_clamped: f64,
    pub final_accuracy: Vec<f64>,
    pub replay_events: f64,
    pub replay_volume: f64,
    pub eval_samples: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, kind: StrategyKind) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.strategy == kind)
    }

    pub fn to_csv(&self) -> String {
        let tasks = self.rows.first().map_or(0, |r| r.final_accuracy.len());
        let mut header = vec!["strategy".to_string(), "seeds".into(), "forgetting".into(), "forgetting_clamped".into()];
        header.extend((0..tasks).map(|i| format!("acc_task{i}")));
        header.extend(["replay_events".into(), "replay_volume".into(), "eval_samples".into()]);
        let mut out = header.join(",");
        out.push('\n');
        for r in &self.rows {
            let mut cells = vec![
                r.strategy.to_string(),
                r.seeds.to_string(),
                format!("{:.6}", r.forgetting),
                format!("{:.6}", r.forgetting_clamped),
            ];
            cells.extend(r.final_accuracy.iter().map(|a| format!("{a:.6}")));
            cells.extend([
                format!("{:.2}", r.replay_events),
                format!("{:.2}", r.replay_volume),
                format!("{:.2}", r.eval_samples),
            ]);
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Seeds used by the `k`-th run of a comparison.
pub fn seed_list(scenario: &ScenarioConfig, seeds: usize) -> Vec<u64> {
    (0..seeds as u64).map(|k| scenario.run.seed + k).collect()
}

pub fn summarize(kind: StrategyKind, reports: &[&ForgettingReport]) -> ComparisonRow {
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&ForgettingReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
    let tasks = reports.first().map_or(0, |r| r.final_accuracy.len());
    ComparisonRow {
        strategy: kind,
        seeds: reports.len(),
        forgetting: mean(&|r| r.forgetting),
        forgetting_clamped: mean(&|r| r.forgetting_clamped),
        final_accuracy: (0..tasks).map(|i| mean(&|r| r.final_accuracy[i])).collect(),
        replay_events: mean(&|r| r.replay_events as f64),
        replay_volume: mean(&|r| r.replay_volume as f64),
        eval_samples: mean(&|r| r.eval_samples as f64),
    }
}

/// Runs every strategy on the same seeds. `on_run` sees each finished run.
pub fn compare_strategies_with(
    scenario: &ScenarioConfig,
    strategies: &[StrategyKind],
    seeds: usize,
    mut on_run: impl FnMut(&RunOutput) -> Result<()>,
) -> Result<ComparisonTable> {
    if seeds == 0 {
        return Err(SimError::Scenario("need at least one seed".into()));
    }
    let mut rows = Vec::with_capacity(strategies.len());
    for &kind in strategies {
        let mut reports = Vec::with_capacity(seeds);
        for seed in seed_list(scenario, seeds) {
            let out = run_strategy(scenario, kind, seed)?;
            on_run(&out)?;
            reports.push(out.report);
        }
        rows.push(summarize(kind, &reports.iter().collect::<Vec<_>>()));
    }
    Ok(ComparisonTable { rows })
}

pub fn compare_strategies(
    scenario: &ScenarioConfig,
    strategies: &[StrategyKind],
    seeds: usize,
) -> Result<ComparisonTable> {
    compare_strategies_with(scenario, strategies, seeds, |_| Ok(()))
}
