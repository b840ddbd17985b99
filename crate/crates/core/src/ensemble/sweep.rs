//! Grid search over decision thresholds on labelled data.
//!
//! This is an add-on for tuning: the pipeline defaults stay the fixed values
//! in [`DecisionThresholds::default`], and nothing calls the sweep
//! implicitly.

use serde::{Deserialize, Serialize};

use super::{DecisionThresholds, PredictionFile, PredictionMeta, PredictionSet};
use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::evaluate_predictions;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub eta: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    #[serde(rename = "taskA")]
    pub task_a: Vec<SweepPoint>,
    #[serde(rename = "taskB")]
    pub task_b: Vec<SweepPoint>,
    /// Best value per task (lowest threshold among ties); a task without
    /// predictions keeps its default.
    pub best: DecisionThresholds,
}

/// Evenly spaced thresholds `step, 2 step, ...` below 1.
pub fn threshold_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step < 0.5) {
        return Err(Error::Argument(format!("grid step {step} must lie in (0, 0.5)")));
    }
    let n = (1.0 / step).ceil() as usize;
    Ok((1..n).map(|i| i as f64 * step).filter(|&v| v < 1.0).collect())
}

fn best(points: &[SweepPoint], fallback: f64) -> f64 {
    points
        .iter()
        .fold(None::<SweepPoint>, |acc, p| match acc {
            Some(a) if a.f1 >= p.f1 => Some(a),
            _ => Some(*p),
        })
        .map_or(fallback, |p| p.eta)
}

/// f1 at every grid threshold, for each task present in `set`.
pub fn sweep_thresholds(set: &PredictionSet, gold: &Dataset, grid: &[f64]) -> Result<ThresholdSweep> {
    if grid.is_empty() {
        return Err(Error::Argument("empty threshold grid".into()));
    }
    let mut task_a = Vec::new();
    let mut task_b = Vec::new();
    for &eta in grid {
        let thresholds = DecisionThresholds { eta_a: eta, eta_b: eta };
        thresholds.validate()?;
        let meta = PredictionMeta { checkpoints: Vec::new(), thresholds, joint: false };
        let report = evaluate_predictions(&PredictionFile::decide(set, meta), gold)?;
        if let Some(r) = report.task_a {
            task_a.push(SweepPoint { eta, f1: r.f1 });
        }
        if let Some(r) = report.task_b {
            task_b.push(SweepPoint { eta, f1: r.f1 });
        }
    }
    let defaults = DecisionThresholds::default();
    let best = DecisionThresholds { eta_a: best(&task_a, defaults.eta_a), eta_b: best(&task_b, defaults.eta_b) };
    Ok(ThresholdSweep { task_a, task_b, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, Label, SyntheticConfig};

    #[test]
    fn grid_is_open_interval() {
        let g = threshold_grid(0.25).unwrap();
        assert_eq!(g, vec![0.25, 0.5, 0.75]);
        assert!(threshold_grid(0.0).is_err());
    }

    #[test]
    fn separable_scores_reach_full_f1() {
        let ds = generate_synthetic(1, 10, &SyntheticConfig::default()).unwrap();
        let mut set = PredictionSet { contributors: 1, ..Default::default() };
        for inst in &ds.instances {
            let p = if inst.label == Some(Label::Entailment) { 0.7 } else { 0.4 };
            set.task_a.insert(inst.uuid.clone(), [1.0 - p, p]);
        }
        let sweep = sweep_thresholds(&set, &ds, &threshold_grid(0.1).unwrap()).unwrap();
        assert!(sweep.task_b.is_empty());
        assert!((sweep.best.eta_a - 0.4).abs() < 1e-9, "{:?}", sweep.best);
        let top = sweep.task_a.iter().find(|p| (p.eta - sweep.best.eta_a).abs() < 1e-12).unwrap();
        assert_eq!(top.f1, 1.0);
        assert_eq!(sweep.best.eta_b, DecisionThresholds::default().eta_b);
    }
}
