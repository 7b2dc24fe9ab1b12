//! Coverage rate, duplicate rate, success rate and their per-trial aggregates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CoverageMap, GridError, GridMap};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("map has no free cells; coverage rate is undefined")]
    NoFreeCells,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("success rate {0} outside [0, 1]")]
    SuccessRate(f64),
}

/// Percentage of free cells visited at least once.
pub fn compute_cr(coverage: &CoverageMap, map: &GridMap) -> Result<f64, MetricsError> {
    let sets = coverage.coverage_sets(map)?;
    if sets.free == 0 {
        return Err(MetricsError::NoFreeCells);
    }
    Ok(sets.visited as f64 / sets.free as f64 * 100.0)
}

/// Percentage of visited cells visited more than once; 0 when nothing is visited.
pub fn compute_dr(coverage: &CoverageMap) -> f64 {
    let visited = coverage.visited_count();
    if visited == 0 {
        return 0.0;
    }
    coverage.revisited_count() as f64 / visited as f64 * 100.0
}

/// Mean coverage rate (percent) scaled by the success rate (fraction).
pub fn compute_csi(cr_mean: f64, sr: f64) -> Result<f64, MetricsError> {
    if !(0.0..=1.0).contains(&sr) {
        return Err(MetricsError::SuccessRate(sr));
    }
    Ok(cr_mean * sr)
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub index: usize,
    pub cr: f64,
    pub dr: f64,
    pub collided: bool,
    /// Mean planning latency over the mission's planning calls, seconds.
    pub latency: f64,
    pub steps: u64,
    /// Why the mission failed, if it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl TrialOutcome {
    pub fn succeeded(&self) -> bool {
        !self.collided && self.failure.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cr: f64,
    pub cr_std: f64,
    pub dr: f64,
    pub dr_std: f64,
    pub sr: f64,
    pub csi: f64,
    pub il: f64,
    pub il_std: f64,
    pub trials: usize,
    pub per_trial: Vec<TrialOutcome>,
}

impl MetricsReport {
    /// Aggregates trials in index order, whatever order they arrive in.
    pub fn aggregate(mut per_trial: Vec<TrialOutcome>) -> Self {
        per_trial.sort_by_key(|t| t.index);
        let col = |f: fn(&TrialOutcome) -> f64| per_trial.iter().map(f).collect::<Vec<_>>();
        let (cr, cr_std) = mean_std(&col(|t| t.cr));
        let (dr, dr_std) = mean_std(&col(|t| t.dr));
        let (il, il_std) = mean_std(&col(|t| t.latency));
        let trials = per_trial.len();
        let sr = if trials == 0 { 0.0 } else { per_trial.iter().filter(|t| t.succeeded()).count() as f64 / trials as f64 };
        let csi = cr * sr;
        Self { cr, cr_std, dr, dr_std, sr, csi, il, il_std, trials, per_trial }
    }
}
