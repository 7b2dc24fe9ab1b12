//! The plan, fly one waypoint, update, replan loop of a single vehicle.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::{Cell, CoverageMap, GridMap, Trajectory};
use crate::mcts::{mix_seed, run_search_with, score_node, ConfigError, MctsConfig, RandomChooser, RolloutRecord};
use crate::metrics::{compute_cr, compute_dr, MetricsReport, TrialOutcome};
use crate::proposer::{Instruction, PlanningContext, Proposer, ProposerAction, ProposerError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlannerKind {
    /// Tree search over proposer candidates.
    Mcts,
    /// One generation request per replan.
    SingleShot,
}

impl PlannerKind {
    pub fn name(self) -> &'static str {
        match self {
            PlannerKind::Mcts => "mcts",
            PlannerKind::SingleShot => "single-shot",
        }
    }
}

impl fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlannerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mcts" => Ok(PlannerKind::Mcts),
            "single-shot" | "single" => Ok(PlannerKind::SingleShot),
            other => Err(format!("unknown planner {other:?} (expected mcts or single-shot)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissionConfig {
    pub planner: PlannerKind,
    /// Replan after this many executed waypoints; 1 replans every step.
    pub replan_every: usize,
    /// Coverage fraction at which the mission is complete.
    pub target_cr: f64,
    pub search: MctsConfig,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self { planner: PlannerKind::Mcts, replan_every: 5, target_cr: 0.95, search: MctsConfig::default() }
    }
}

impl MissionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.search.validate()?;
        if self.replan_every == 0 {
            return Err(ConfigError("replan_every must be >= 1".into()));
        }
        if !(self.target_cr > 0.0 && self.target_cr <= 1.0) {
            return Err(ConfigError("target_cr must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissionStatus {
    Idle,
    Planning,
    Flying,
    Complete,
    Failed,
}

impl MissionStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, MissionStatus::Complete | MissionStatus::Failed)
    }
}

#[derive(Debug, Error)]
pub enum MissionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("map has {} free cell(s) unreachable from the start, e.g. {}", .0.len(), .0[0])]
    Disconnected(Vec<Cell>),
    #[error(transparent)]
    Instruction(#[from] ProposerError),
    #[error("mission has failed; instructions are no longer accepted")]
    Failed,
    #[error("mission is {0:?}; expected a flying mission with a plan")]
    NotFlying(MissionStatus),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MissionState {
    pub map: GridMap,
    pub coverage: CoverageMap,
    pub position: Cell,
    pub instruction: Instruction,
    pub step: u64,
    /// Remaining waypoints, not including the current position.
    pub plan: Trajectory,
    pub status: MissionStatus,
    pub history: Vec<Cell>,
    pub failure: Option<String>,
    pub collided: bool,
    /// An instruction arrived since the last plan.
    pub replan_pending: bool,
    pub steps_since_plan: usize,
    pub plans_made: u64,
    /// Instruction text the current plan was made for.
    pub planned_with: Option<String>,
    /// Planning wall-clock time per plan, seconds.
    pub latencies: Vec<f64>,
}

impl MissionState {
    pub fn cr(&self) -> f64 {
        compute_cr(&self.coverage, &self.map).unwrap_or(0.0)
    }

    pub fn dr(&self) -> f64 {
        compute_dr(&self.coverage)
    }
}

/// One line of the replay file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub step: u64,
    pub position: Cell,
    pub plan_head: Option<Cell>,
    pub cr: f64,
    pub dr: f64,
    pub instruction_hash: String,
}

pub fn instruction_hash(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

pub fn write_replay(records: &[ReplayRecord], path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub struct Mission {
    state: MissionState,
    config: MissionConfig,
    proposer: Arc<dyn Proposer>,
    seed: u64,
    replay: Vec<ReplayRecord>,
}

impl Mission {
    /// Places the vehicle on the map start, which counts as its first visit.
    pub fn launch(
        map: GridMap,
        instruction: &str,
        proposer: Arc<dyn Proposer>,
        config: MissionConfig,
        seed: u64,
    ) -> Result<Self, MissionError> {
        config.validate()?;
        let unreachable = map.unreachable_free_cells();
        if !unreachable.is_empty() {
            return Err(MissionError::Disconnected(unreachable));
        }
        let instruction = Instruction::new(instruction, 0)?;
        let start = map.start();
        let mut coverage = CoverageMap::new(&map);
        coverage.visit(&map, start).expect("start is free");
        let state = MissionState {
            map,
            coverage,
            position: start,
            instruction,
            step: 0,
            plan: Trajectory::default(),
            status: MissionStatus::Idle,
            history: vec![start],
            failure: None,
            collided: false,
            replan_pending: false,
            steps_since_plan: 0,
            plans_made: 0,
            planned_with: None,
            latencies: Vec::new(),
        };
        let mut mission = Self { state, config, proposer, seed, replay: Vec::new() };
        mission.record();
        Ok(mission)
    }

    pub fn state(&self) -> &MissionState {
        &self.state
    }

    pub fn config(&self) -> &MissionConfig {
        &self.config
    }

    pub fn replay(&self) -> &[ReplayRecord] {
        &self.replay
    }

    fn record(&mut self) {
        let s = &self.state;
        self.replay.push(ReplayRecord {
            step: s.step,
            position: s.position,
            plan_head: s.plan.first(),
            cr: s.cr(),
            dr: s.dr(),
            instruction_hash: instruction_hash(&s.instruction.text),
        });
    }

    fn fail(&mut self, cause: impl Into<String>) {
        self.state.status = MissionStatus::Failed;
        self.state.failure = Some(cause.into());
    }

    fn target_reached(&self) -> bool {
        self.state.cr() >= self.config.target_cr * 100.0 - 1e-9
    }

    pub fn needs_replan(&self) -> bool {
        let s = &self.state;
        s.status == MissionStatus::Idle
            || s.plan.is_empty()
            || s.replan_pending
            || s.steps_since_plan >= self.config.replan_every
    }

    /// Reward of flying the rest of the current plan. Only a periodic replan
    /// under an unchanged instruction has an incumbent to compare against.
    fn incumbent_reward(&self) -> Option<f64> {
        let s = &self.state;
        if s.status != MissionStatus::Flying || s.replan_pending || s.plan.is_empty() {
            return None;
        }
        let path: Trajectory = std::iter::once(s.position).chain(s.plan.iter().copied()).collect();
        let ctx = PlanningContext { map: &s.map, coverage: &s.coverage, instruction: &s.instruction, start: s.position };
        let seed = mix_seed(self.seed, s.plans_made * 2);
        let reply = self.proposer.propose(&ProposerAction::evaluate(path.clone(), None), &ctx, seed).ok()?;
        Some(score_node(&s.map, &s.coverage, s.position, &path, &self.config.search.weights, reply.compliance?))
    }

    /// Replaces the plan with the planner's best path from the current
    /// position, unless the rest of the current plan scores at least as well.
    /// A plan that does not start at the position is retried once with
    /// another seed.
    pub fn plan_step(&mut self, observer: &mut dyn FnMut(&RolloutRecord)) {
        if !matches!(self.state.status, MissionStatus::Idle | MissionStatus::Flying) {
            return;
        }
        let incumbent = self.incumbent_reward();
        self.state.status = MissionStatus::Planning;
        for attempt in 0..2u64 {
            let seed = mix_seed(self.seed, self.state.plans_made * 2 + attempt);
            let search = match self.config.planner {
                PlannerKind::Mcts => self.config.search,
                PlannerKind::SingleShot => MctsConfig { n_rollouts: 0, ..self.config.search },
            };
            let started = Instant::now();
            let result = {
                let s = &self.state;
                let ctx = PlanningContext { map: &s.map, coverage: &s.coverage, instruction: &s.instruction, start: s.position };
                let mut chooser = RandomChooser::new(mix_seed(seed, u64::MAX));
                run_search_with(&ctx, self.proposer.as_ref(), &search, seed, &mut chooser, observer)
            };
            self.state.latencies.push(started.elapsed().as_secs_f64());
            let result = match result {
                Ok(r) => r,
                Err(e) => return self.fail(format!("planner failed: {e}")),
            };
            if let Some(cause) = &result.aborted {
                if !result.tree.node(result.best_node).valid {
                    return self.fail(format!("planner failed: {cause}"));
                }
            }
            if incumbent.is_some_and(|q| q >= result.best_q) {
                let s = &mut self.state;
                s.plans_made += 1;
                s.steps_since_plan = 0;
                s.status = MissionStatus::Flying;
                return;
            }
            let best = result.best.into_waypoints();
            if best.first() != Some(&self.state.position) {
                if attempt == 0 {
                    log::warn!("plan does not start at {}; replanning", self.state.position);
                    continue;
                }
                return self.fail("planner returned a plan that does not start at the current position");
            }
            let s = &mut self.state;
            s.plan = Trajectory::new(best[1..].to_vec());
            s.plans_made += 1;
            s.planned_with = Some(s.instruction.text.clone());
            s.replan_pending = false;
            s.steps_since_plan = 0;
            s.status = MissionStatus::Flying;
            if s.plan.is_empty() {
                if self.target_reached() {
                    self.state.status = MissionStatus::Complete;
                } else {
                    self.fail("planner produced no moves before the coverage target");
                }
            }
            return;
        }
    }

    /// Flies to the first planned waypoint.
    pub fn execute_step(&mut self) -> Result<(), MissionError> {
        if self.state.status != MissionStatus::Flying || self.state.plan.is_empty() {
            return Err(MissionError::NotFlying(self.state.status));
        }
        let next = self.state.plan.waypoints()[0];
        if !self.state.map.is_free(next) {
            self.state.collided = true;
            self.fail(format!("collision: waypoint {next} is an obstacle or outside the map"));
            return Ok(());
        }
        if next.manhattan(self.state.position) != 1 {
            self.fail(format!("connectivity breach: {next} is not adjacent to {}", self.state.position));
            return Ok(());
        }
        let s = &mut self.state;
        s.coverage.visit(&s.map, next).expect("free cell");
        s.position = next;
        s.history.push(next);
        s.step += 1;
        s.plan = Trajectory::new(s.plan.waypoints()[1..].to_vec());
        s.steps_since_plan += 1;
        if self.target_reached() {
            self.state.status = MissionStatus::Complete;
        }
        self.record();
        Ok(())
    }

    /// Replaces the instruction and schedules a replan at the next step
    /// boundary. Returns the step from which the new plan applies.
    pub fn submit_instruction(&mut self, text: &str) -> Result<u64, MissionError> {
        if self.state.status == MissionStatus::Failed {
            return Err(MissionError::Failed);
        }
        let s = &mut self.state;
        s.instruction = Instruction::new(text, s.step)?;
        s.replan_pending = true;
        if s.status == MissionStatus::Complete && s.coverage.visited_count() < s.map.free_count() {
            s.status = MissionStatus::Flying;
            s.plan = Trajectory::default();
        }
        Ok(s.step)
    }

    pub fn abort(&mut self) {
        self.stop("aborted");
    }

    /// Fails a mission that has not ended yet with the given cause.
    pub fn stop(&mut self, cause: &str) {
        if !self.state.status.is_terminal() {
            self.fail(cause);
        }
    }

    /// Plans if needed, then flies one waypoint. Returns `false` once the
    /// mission has ended.
    pub fn tick(&mut self, observer: &mut dyn FnMut(&RolloutRecord)) -> bool {
        if self.state.status.is_terminal() {
            return false;
        }
        if self.needs_replan() {
            self.plan_step(observer);
            if self.state.status != MissionStatus::Flying {
                return !self.state.status.is_terminal();
            }
        }
        self.execute_step().expect("flying with a plan");
        true
    }

    /// Ticks until the mission ends or `max_steps` waypoints have been flown.
    pub fn run(&mut self, max_steps: u64) {
        while self.state.step < max_steps && self.tick(&mut |_| {}) {}
    }

    pub fn outcome(&self, index: usize) -> TrialOutcome {
        let s = &self.state;
        let latency =
            if s.latencies.is_empty() { 0.0 } else { s.latencies.iter().sum::<f64>() / s.latencies.len() as f64 };
        TrialOutcome {
            index,
            cr: s.cr(),
            dr: s.dr(),
            collided: s.collided,
            latency,
            steps: s.step,
            failure: s.failure.clone(),
        }
    }

    pub fn into_state(self) -> MissionState {
        self.state
    }
}

/// Launches and runs a mission to completion, failure or `max_steps`.
pub fn run_mission(
    map: GridMap,
    instruction: &str,
    proposer: Arc<dyn Proposer>,
    config: MissionConfig,
    seed: u64,
    max_steps: u64,
) -> Result<(Mission, MetricsReport), MissionError> {
    let mut mission = Mission::launch(map, instruction, proposer, config, seed)?;
    mission.run(max_steps);
    let report = MetricsReport::aggregate(vec![mission.outcome(0)]);
    Ok((mission, report))
}

/// Default step budget: enough to sweep the map several times over.
pub fn default_max_steps(map: &GridMap) -> u64 {
    4 * map.cell_count() as u64
}
