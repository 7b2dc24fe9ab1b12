//! Wire types shared by the HTTP endpoints and the snapshot stream.

use coverage_pilot::grid::{Cell, MapFile};
use coverage_pilot::localization::PoseEstimate;
use coverage_pilot::mission::{MissionConfig, MissionState, MissionStatus, PlannerKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageEntry {
    pub cell: Cell,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionView {
    pub text: String,
    pub issued_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseView {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub residual: f64,
    pub confident: bool,
}

impl From<PoseEstimate> for PoseView {
    fn from(e: PoseEstimate) -> Self {
        Self { x: e.pose.x, y: e.pose.y, heading: e.pose.heading, residual: e.residual, confident: e.confident }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum PlannerActivity {
    Idle,
    Searching { rollout: usize },
}

/// Everything a ground station needs to draw one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub mission_id: String,
    /// Position in this mission's snapshot sequence, starting at 0.
    pub seq: u64,
    pub step: u64,
    pub position: Cell,
    /// Remaining waypoints, excluding the current position.
    pub plan: Vec<Cell>,
    /// Visit counts of every visited cell.
    pub coverage: Vec<CoverageEntry>,
    pub free_cells: usize,
    pub cr: f64,
    pub dr: f64,
    pub status: MissionStatus,
    pub paused: bool,
    pub failure: Option<String>,
    pub last_instruction: Option<InstructionView>,
    pub pose_estimate: Option<PoseView>,
    pub planner_activity: PlannerActivity,
}

impl StateSnapshot {
    pub fn from_state(mission_id: &str, s: &MissionState) -> Self {
        Self {
            mission_id: mission_id.to_string(),
            seq: 0,
            step: s.step,
            position: s.position,
            plan: s.plan.waypoints().to_vec(),
            coverage: s.coverage.nonzero().map(|(cell, count)| CoverageEntry { cell, count }).collect(),
            free_cells: s.map.free_count(),
            cr: s.cr(),
            dr: s.dr(),
            status: s.status,
            paused: false,
            failure: s.failure.clone(),
            last_instruction: Some(InstructionView { text: s.instruction.text.clone(), issued_at: s.instruction.issued_at }),
            pose_estimate: None,
            planner_activity: PlannerActivity::Idle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum MapSpec {
    /// Random connected map.
    Generate { width: usize, height: usize, density: f64, seed: u64 },
    /// Inline map.
    File(MapFile),
    /// Map file on the server's filesystem.
    Path(String),
}

fn default_namespace() -> String {
    "default".to_string()
}

fn default_instruction() -> String {
    "complete coverage".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartRequest {
    pub map: MapSpec,
    #[serde(default = "default_instruction")]
    pub instruction: String,
    pub planner: Option<PlannerKind>,
    pub config: Option<MissionConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_namespace")]
    pub namespace: String,
    /// Abort a mission still running in the namespace instead of refusing.
    #[serde(default)]
    pub replace: bool,
    pub max_steps: Option<u64>,
    /// Delay between executed waypoints; the service default when absent.
    pub step_interval_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartResponse {
    pub id: String,
    pub status: MissionStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionAck {
    pub accepted: bool,
    /// Step from which the replanned path applies.
    pub scheduled_step: u64,
    pub status: MissionStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlCommand {
    Pause,
    Resume,
    Abort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlRequest {
    pub command: ControlCommand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlAck {
    pub command: ControlCommand,
    pub status: MissionStatus,
    pub paused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
