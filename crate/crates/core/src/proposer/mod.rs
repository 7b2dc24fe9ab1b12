//! The trajectory-generation boundary.
//!
//! A [`Proposer`] answers one of four requests against a planning input
//! (map, coverage, instruction, start cell): generate a path, regenerate it
//! from violation feedback, fine-tune it toward the instruction, or evaluate
//! it. Two backends exist: a deterministic rule-based one and a remote
//! chat-completions client.

mod heuristic;
mod intent;
mod parse;
mod prompt;
mod remote;
mod tour;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Cell, CoverageMap, GridMap, Trajectory};

pub use heuristic::{coverage_tour, HeuristicProposer, SweepVariant};
pub use intent::{Intent, Mode, Quadrant};
pub use parse::{parse_reply, ParseError};
pub use prompt::{build_prompt, serialize_trajectory, SYSTEM_PROMPT, TEMPLATE_VERSION};
pub use remote::{RemoteConfig, RemoteProposer, ENV_API_BASE, ENV_API_KEY, ENV_MODEL};

/// A natural-language operator command.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub text: String,
    /// Mission step at which it was issued.
    pub issued_at: u64,
}

impl Instruction {
    pub fn new(text: impl Into<String>, issued_at: u64) -> Result<Self, ProposerError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ProposerError::EmptyInstruction);
        }
        Ok(Self { text, issued_at })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Generate,
    Regenerate,
    Finetune,
    Evaluate,
}

impl ActionKind {
    pub const ALL: [ActionKind; 4] = [ActionKind::Generate, ActionKind::Regenerate, ActionKind::Finetune, ActionKind::Evaluate];

    pub fn produces_trajectory(self) -> bool {
        !matches!(self, ActionKind::Evaluate)
    }

    pub fn label(self) -> &'static str {
        match self {
            ActionKind::Generate => "A1:generate",
            ActionKind::Regenerate => "A2:regenerate",
            ActionKind::Finetune => "A3:finetune",
            ActionKind::Evaluate => "A4:evaluate",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A request to a proposer. Build through the constructors, which keep the
/// feedback/prior combinations consistent with the action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposerAction {
    kind: ActionKind,
    feedback: Option<String>,
    prior: Option<Trajectory>,
}

impl ProposerAction {
    pub fn generate() -> Self {
        Self { kind: ActionKind::Generate, feedback: None, prior: None }
    }

    pub fn regenerate(prior: Trajectory, feedback: impl Into<String>) -> Self {
        Self { kind: ActionKind::Regenerate, feedback: Some(feedback.into()), prior: Some(prior) }
    }

    pub fn finetune(prior: Trajectory) -> Self {
        Self { kind: ActionKind::Finetune, feedback: None, prior: Some(prior) }
    }

    pub fn evaluate(prior: Trajectory, feedback: Option<String>) -> Self {
        Self { kind: ActionKind::Evaluate, feedback, prior: Some(prior) }
    }

    pub fn kind(&self) -> ActionKind {
        self.kind
    }

    pub fn feedback(&self) -> Option<&str> {
        self.feedback.as_deref()
    }

    pub fn prior(&self) -> Option<&Trajectory> {
        self.prior.as_ref()
    }
}

/// What a backend answered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposerReply {
    pub trajectory: Option<Trajectory>,
    /// Instruction compliance in `[0, 1]` (evaluate only).
    pub compliance: Option<f64>,
    /// `true` when the evaluator asks for further exploration.
    pub verdict: Option<bool>,
    pub raw: String,
    /// Wall-clock time spent in the backend, when measured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<Duration>,
}

impl ProposerReply {
    pub fn with_trajectory(trajectory: Trajectory, raw: String) -> Self {
        Self { trajectory: Some(trajectory), compliance: None, verdict: None, raw, latency: None }
    }

    pub fn with_evaluation(compliance: f64, further_exploration: bool, raw: String) -> Self {
        Self { trajectory: None, compliance: Some(compliance), verdict: Some(further_exploration), raw, latency: None }
    }
}

/// The planning input `x`: map, current coverage, instruction and the cell
/// every proposed path must start from.
#[derive(Debug, Clone, Copy)]
pub struct PlanningContext<'a> {
    pub map: &'a GridMap,
    pub coverage: &'a CoverageMap,
    pub instruction: &'a Instruction,
    pub start: Cell,
}

#[derive(Debug, Error)]
pub enum ProposerError {
    #[error("instruction text is empty")]
    EmptyInstruction,
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("proposer backend unavailable: {0}")]
    Unavailable(String),
    #[error("proposer configuration: {0}")]
    Config(String),
    #[error("{0} is missing the prior trajectory it acts on")]
    MissingPrior(ActionKind),
}

impl ProposerError {
    /// Whether the search should stop rather than record an invalid node.
    pub fn is_fatal(&self) -> bool {
        matches!(self, ProposerError::Unavailable(_) | ProposerError::Config(_))
    }
}

/// A trajectory generator / evaluator.
pub trait Proposer: Send + Sync {
    /// Backend identifier recorded in datasets and logs.
    fn id(&self) -> String;

    fn propose(&self, action: &ProposerAction, ctx: &PlanningContext<'_>, seed: u64) -> Result<ProposerReply, ProposerError>;
}

impl<P: Proposer + ?Sized> Proposer for Box<P> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn propose(&self, action: &ProposerAction, ctx: &PlanningContext<'_>, seed: u64) -> Result<ProposerReply, ProposerError> {
        (**self).propose(action, ctx, seed)
    }
}

impl<P: Proposer + ?Sized> Proposer for std::sync::Arc<P> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn propose(&self, action: &ProposerAction, ctx: &PlanningContext<'_>, seed: u64) -> Result<ProposerReply, ProposerError> {
        (**self).propose(action, ctx, seed)
    }
}
