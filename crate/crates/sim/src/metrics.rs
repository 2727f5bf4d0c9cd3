use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// `cells[t][i]` is accuracy on task `i` after stage `t`; only `t >= i` is meaningful.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceMatrix {
    pub cells: Vec<Vec<Option<f64>>>,
}

impl PerformanceMatrix {
    pub fn new(tasks: usize) -> Self {
        Self { cells: vec![vec![None; tasks]; tasks] }
    }

    pub fn tasks(&self) -> usize {
        self.cells.len()
    }

    pub fn set(&mut self, stage: usize, task: usize, value: f64) {
        self.cells[stage][task] = Some(value);
    }

    pub fn get(&self, stage: usize, task: usize) -> Option<f64> {
        self.cells.get(stage).and_then(|row| row.get(task)).copied().flatten()
    }

    /// Row of the last stage.
    pub fn final_accuracies(&self) -> Vec<Option<f64>> {
        self.cells.last().cloned().unwrap_or_default()
    }

    pub fn check_complete(&self) -> Result<()> {
        let t = self.tasks();
        for (s, row) in self.cells.iter().enumerate() {
            if row.len() != t {
                return Err(SimError::IncompleteMatrix(format!("row {s} has {} cells, expected {t}", row.len())));
            }
            for (i, cell) in row.iter().enumerate().take(s + 1) {
                match cell {
                    Some(v) if v.is_finite() => {}
                    _ => return Err(SimError::IncompleteMatrix(format!("missing cell (stage {s}, task {i})"))),
                }
            }
        }
        Ok(())
    }
}

/// Mean over tasks `i < T` of the largest later drop `F_i(D_i) - F_t(D_i)`.
/// Negative when every later stage improved on a task.
pub fn forgetting_metric(matrix: &PerformanceMatrix) -> Result<f64> {
    let t = matrix.tasks();
    if t < 2 {
        return Err(SimError::IncompleteMatrix(format!("need at least 2 stages, got {t}")));
    }
    matrix.check_complete()?;
    let mut total = 0.0;
    for i in 0..t - 1 {
        let own = matrix.cells[i][i].unwrap();
        let worst = (i + 1..t).map(|s| own - matrix.cells[s][i].unwrap()).fold(f64::NEG_INFINITY, f64::max);
        total += worst;
    }
    Ok(total / (t - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lower(rows: &[&[f64]]) -> PerformanceMatrix {
        let mut m = PerformanceMatrix::new(rows.len());
        for (s, row) in rows.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                m.set(s, i, *v);
            }
        }
        m
    }

    #[test]
    fn hand_example() {
        let m = lower(&[&[0.9], &[0.8, 0.7], &[0.85, 0.6, 0.5]]);
        assert!((forgetting_metric(&m).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn negative_when_improving() {
        let m = lower(&[&[0.5], &[0.6, 0.5], &[0.7, 0.8, 0.5]]);
        let f = forgetting_metric(&m).unwrap();
        assert!((f - (-0.1 + -0.3) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn incomplete_rejected() {
        let m = lower(&[&[0.9], &[0.8], &[0.85, 0.6, 0.5]]);
        assert!(matches!(forgetting_metric(&m), Err(SimError::IncompleteMatrix(_))));
        assert!(forgetting_metric(&lower(&[&[0.9]])).is_err());
        let mut nan = lower(&[&[0.9], &[0.8, 0.7]]);
        nan.set(1, 0, f64::NAN);
        assert!(forgetting_metric(&nan).is_err());
    }
}
