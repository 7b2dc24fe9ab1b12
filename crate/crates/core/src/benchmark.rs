//! Density × planner benchmark table: CR, DR, CSI and IL over seeded trials.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{generate_map, DensityTier};
use crate::mcts::mix_seed;
use crate::metrics::{MetricsReport, TrialOutcome};
use crate::mission::{default_max_steps, Mission, MissionConfig, PlannerKind};
use crate::proposer::Proposer;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark setup: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Obstacle fractions, one table block per entry.
    pub densities: Vec<f64>,
    pub planners: Vec<PlannerKind>,
    pub trials: usize,
    pub width: usize,
    pub height: usize,
    pub instruction: String,
    pub mission: MissionConfig,
    /// Step budget per mission; defaults to four times the cell count.
    pub max_steps: Option<u64>,
    /// Record wall-clock planning latency. Off gives reproducible output.
    pub measure_latency: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            densities: DensityTier::ALL.iter().map(|t| t.fraction()).collect(),
            planners: vec![PlannerKind::Mcts, PlannerKind::SingleShot],
            trials: 50,
            width: 10,
            height: 10,
            instruction: "complete coverage".to_string(),
            mission: MissionConfig::default(),
            max_steps: None,
            measure_latency: true,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.trials == 0 {
            return Err(BenchError::Setup("trials must be >= 1".into()));
        }
        if self.densities.is_empty() || self.planners.is_empty() {
            return Err(BenchError::Setup("need at least one density and one planner".into()));
        }
        if let Some(d) = self.densities.iter().find(|d| !(0.0..1.0).contains(*d)) {
            return Err(BenchError::Setup(format!("density {d} outside [0, 1)")));
        }
        self.mission.validate().map_err(|e| BenchError::Setup(e.to_string()))
    }
}

/// Tier name for the standard densities, the percentage otherwise.
pub fn density_label(density: f64) -> String {
    DensityTier::ALL
        .iter()
        .find(|t| (t.fraction() - density).abs() < 1e-12)
        .map(|t| t.name().to_string())
        .unwrap_or_else(|| format!("{:.0}%", density * 100.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub density: f64,
    pub label: String,
    pub planner: PlannerKind,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub seed: u64,
    pub backend: String,
    pub rows: Vec<BenchRow>,
}

/// Seed of the map used by trial `trial`; shared by every planner.
pub fn trial_map_seed(seed: u64, trial: usize) -> u64 {
    mix_seed(seed, trial as u64)
}

fn run_trial(cfg: &BenchConfig, proposer: &Arc<dyn Proposer>, density: f64, planner: PlannerKind, seed: u64, trial: usize) -> TrialOutcome {
    let failed = |why: String| TrialOutcome { index: trial, cr: 0.0, dr: 0.0, collided: false, latency: 0.0, steps: 0, failure: Some(why) };
    let map = match generate_map(cfg.width, cfg.height, density, trial_map_seed(seed, trial)) {
        Ok(m) => m,
        Err(e) => return failed(e.to_string()),
    };
    let max_steps = cfg.max_steps.unwrap_or_else(|| default_max_steps(&map));
    let mission_cfg = MissionConfig { planner, ..cfg.mission };
    let mut mission = match Mission::launch(map, &cfg.instruction, proposer.clone(), mission_cfg, mix_seed(seed, trial as u64 + 1)) {
        Ok(m) => m,
        Err(e) => return failed(e.to_string()),
    };
    mission.run(max_steps);
    let mut outcome = mission.outcome(trial);
    if !cfg.measure_latency {
        outcome.latency = 0.0;
    }
    outcome
}

/// Runs every (density, planner) cell. Trials run on up to `jobs` threads;
/// results do not depend on `jobs`.
pub fn run_benchmark(cfg: &BenchConfig, proposer: Arc<dyn Proposer>, seed: u64, jobs: usize) -> Result<BenchTable, BenchError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| BenchError::Setup(e.to_string()))?;
    let mut rows = Vec::new();
    for &density in &cfg.densities {
        for &planner in &cfg.planners {
            let outcomes: Vec<TrialOutcome> = pool.install(|| {
                (0..cfg.trials).into_par_iter().map(|t| run_trial(cfg, &proposer, density, planner, seed, t)).collect()
            });
            log::info!("{} {planner}: {} trials done", density_label(density), outcomes.len());
            rows.push(BenchRow { density, label: density_label(density), planner, report: MetricsReport::aggregate(outcomes) });
        }
    }
    Ok(BenchTable { seed, backend: proposer.id(), rows })
}

fn pm(mean: f64, std: f64) -> String {
    format!("{mean:.2} ± {std:.2}")
}

impl BenchTable {
    /// Aligned plain-text table, two decimals.
    pub fn to_text(&self) -> String {
        let header = ["density", "planner", "trials", "CR (%)", "DR (%)", "SR", "CSI (%)", "IL (s)"];
        let cells: Vec<[String; 8]> = self
            .rows
            .iter()
            .map(|r| {
                let m = &r.report;
                [
                    r.label.clone(),
                    r.planner.to_string(),
                    m.trials.to_string(),
                    pm(m.cr, m.cr_std),
                    pm(m.dr, m.dr_std),
                    format!("{:.2}", m.sr),
                    format!("{:.2}", m.csi),
                    format!("{:.4} ± {:.4}", m.il, m.il_std),
                ]
            })
            .collect();
        let mut width = header.map(|h| h.chars().count());
        for row in &cells {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, row: &[&str]| {
            let padded: Vec<String> =
                row.iter().zip(&width).map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count()))).collect();
            let _ = writeln!(out, "{}", padded.join("  ").trim_end());
        };
        line(&mut out, &header);
        line(&mut out, &width.map(|w| "-".repeat(w)).iter().map(String::as_str).collect::<Vec<_>>());
        for row in &cells {
            line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("density,label,planner,trials,cr,cr_std,dr,dr_std,sr,csi,il,il_std\n");
        for r in &self.rows {
            let m = &r.report;
            let _ = writeln!(
                out,
                "{},{},{},{},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.4},{:.4}",
                r.density, r.label, r.planner, m.trials, m.cr, m.cr_std, m.dr, m.dr_std, m.sr, m.csi, m.il, m.il_std
            );
        }
        out
    }

    /// One line per trial: density, planner and the trial outcome.
    pub fn per_trial_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            density: f64,
            planner: PlannerKind,
            #[serde(flatten)]
            trial: &'a TrialOutcome,
        }
        let mut out = String::new();
        for r in &self.rows {
            for t in &r.report.per_trial {
                out.push_str(&serde_json::to_string(&Line { density: r.density, planner: r.planner, trial: t }).unwrap());
                out.push('\n');
            }
        }
        out
    }

    pub fn row(&self, density: f64, planner: PlannerKind) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.planner == planner && (r.density - density).abs() < 1e-12)
    }
}
