//! Monte Carlo tree search over candidate trajectories.
//!
//! Each node holds one candidate path. Rollouts pick applicable actions at
//! random, ask the proposer for a new candidate, score it with the coverage
//! reward, blend the score into the ancestors and descend by UCT.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{validate_path, Cell, CoverageMap, CoverageSets, GridMap, Trajectory};
use crate::proposer::{ActionKind, PlanningContext, Proposer, ProposerAction, ProposerError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    /// Coverage gain.
    pub c1: f64,
    /// Revisit penalty.
    pub c2: f64,
    /// Instruction compliance.
    pub c3: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { c1: 1.0, c2: 0.5, c3: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MctsConfig {
    pub omega: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub weights: RewardWeights,
    pub n_rollouts: usize,
    pub max_depth: usize,
    pub terminal_cr: f64,
}

impl Default for MctsConfig {
    fn default() -> Self {
        Self {
            omega: 1.4,
            epsilon: 1e-6,
            alpha: 0.5,
            weights: RewardWeights::default(),
            n_rollouts: 8,
            max_depth: 6,
            terminal_cr: 0.95,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("invalid search configuration: {0}")]
pub struct ConfigError(pub String);

impl MctsConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let w = &self.weights;
        let checks = [
            (self.omega >= 0.0, "omega must be >= 0"),
            (self.epsilon > 0.0, "epsilon must be > 0"),
            (self.alpha > 0.0 && self.alpha <= 1.0, "alpha must lie in (0, 1]"),
            (w.c1 > 0.0 && w.c2 > 0.0 && w.c3 > 0.0, "reward weights must be > 0"),
            (self.max_depth >= 1, "max_depth must be >= 1"),
            ((0.0..=1.0).contains(&self.terminal_cr), "terminal_cr must lie in [0, 1]"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(ConfigError(msg.to_string())),
            None => Ok(()),
        }
    }
}

/// `Q + omega * sqrt(ln(n_parent + 1) / (n_self + epsilon))`.
pub fn uct_score(q: f64, n_self: u32, n_parent: u32, omega: f64, epsilon: f64) -> f64 {
    q + omega * ((n_parent as f64 + 1.0).ln() / (n_self as f64 + epsilon)).sqrt()
}

/// Coverage reward of a valid candidate from the coverage it leaves behind.
/// With nothing visited the revisit ratio is taken as 0.
pub fn reward(sets: CoverageSets, weights: &RewardWeights, compliance: f64) -> f64 {
    let coverage = sets.visited as f64 / sets.free as f64;
    let revisits = if sets.visited == 0 { 0.0 } else { sets.revisited as f64 / sets.visited as f64 };
    weights.c1 * coverage - weights.c2 * revisits + weights.c3 * compliance
}

/// Candidate validity: the path is nonempty, begins at `start` and passes
/// [`validate_path`]. Returns violation feedback otherwise.
pub fn check_candidate(map: &GridMap, start: Cell, path: &Trajectory) -> Result<(), String> {
    let report = validate_path(map, path);
    let mut lines: Vec<String> = report.feedback(path).into_iter().collect();
    match path.first() {
        None => lines.push("Error: path is empty".to_string()),
        Some(first) if first != start => {
            lines.push(format!("Error: path must start at the current position {start}, not {first}"))
        }
        _ => {}
    }
    if lines.is_empty() {
        Ok(())
    } else {
        Err(lines.join("\n"))
    }
}

/// Reward of `path` flown from `coverage_before`; 0 for an invalid path.
pub fn score_node(
    map: &GridMap,
    coverage_before: &CoverageMap,
    start: Cell,
    path: &Trajectory,
    weights: &RewardWeights,
    compliance: f64,
) -> f64 {
    if check_candidate(map, start, path).is_err() {
        return 0.0;
    }
    match coverage_before.simulate_plan(map, path).and_then(|after| after.coverage_sets(map)) {
        Ok(sets) => reward(sets, weights, compliance),
        Err(_) => 0.0,
    }
}

fn coverage_rate(map: &GridMap, coverage_before: &CoverageMap, path: &Trajectory) -> Option<f64> {
    let after = coverage_before.simulate_plan(map, path).ok()?;
    let covered = map.free_cells().filter(|&c| after.count(c) > 0).count();
    Some(covered as f64 / map.free_count() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchNode {
    pub id: usize,
    /// Empty when the proposer reply could not be parsed.
    pub trajectory: Trajectory,
    /// Reward blended with the children's by back-propagation.
    pub q_value: f64,
    /// The node's own reward.
    pub reward: f64,
    pub visits: u32,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub depth: usize,
    pub produced_by: ActionKind,
    /// Violation text, present exactly when the node is invalid.
    pub feedback: Option<String>,
    pub valid: bool,
    pub compliance: f64,
    /// Latest evaluation verdict; `Some(false)` ends rollouts here.
    pub verdict: Option<bool>,
    /// Simulated coverage fraction after flying the trajectory.
    pub coverage_rate: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    nodes: Vec<SearchNode>,
}

impl SearchTree {
    pub fn nodes(&self) -> &[SearchNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &SearchNode {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: usize) -> &mut SearchNode {
        &mut self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Appends a node, wiring the parent link. Returns its id.
    pub fn push(&mut self, mut node: SearchNode) -> usize {
        let id = self.nodes.len();
        node.id = id;
        node.children.clear();
        node.depth = node.parent.map_or(0, |p| self.nodes[p].depth + 1);
        if let Some(p) = node.parent {
            self.nodes[p].children.push(id);
        }
        self.nodes.push(node);
        id
    }

    /// Child of `id` with the highest UCT score, lowest id on ties.
    pub fn best_child(&self, id: usize, omega: f64, epsilon: f64) -> Option<usize> {
        let parent_visits = self.nodes[id].visits;
        let mut best: Option<(usize, f64)> = None;
        for &c in &self.nodes[id].children {
            let n = &self.nodes[c];
            let u = uct_score(n.q_value, n.visits, parent_visits, omega, epsilon);
            if best.is_none_or(|(_, bu)| u > bu) {
                best = Some((c, u));
            }
        }
        best.map(|(c, _)| c)
    }

    /// Descends from the root by UCT to the first leaf.
    pub fn select_leaf(&self, config: &MctsConfig) -> usize {
        let mut id = 0;
        while let Some(c) = self.best_child(id, config.omega, config.epsilon) {
            id = c;
        }
        id
    }

    /// Blends each ancestor of `from`, parent first, toward its best child:
    /// `Q <- (1 - alpha) Q + alpha max_child Q`.
    pub fn backpropagate(&mut self, from: usize, alpha: f64) {
        let mut cur = self.nodes[from].parent;
        while let Some(id) = cur {
            let best = self.nodes[id].children.iter().map(|&c| self.nodes[c].q_value).fold(f64::NEG_INFINITY, f64::max);
            let node = &mut self.nodes[id];
            node.q_value = (1.0 - alpha) * node.q_value + alpha * best;
            cur = node.parent;
        }
    }

    /// Actions that may be taken at `id`: generate only at the root, regenerate
    /// only on an invalid node, fine-tune and evaluate only on a valid one.
    pub fn applicable_actions(&self, id: usize) -> Vec<ActionKind> {
        let node = &self.nodes[id];
        let mut out = Vec::new();
        if id == 0 {
            out.push(ActionKind::Generate);
        }
        if node.valid {
            out.extend([ActionKind::Finetune, ActionKind::Evaluate]);
        } else {
            out.push(ActionKind::Regenerate);
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("{kind} is not applicable at node {node}")]
    NotApplicable { kind: ActionKind, node: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Proposer(#[from] ProposerError),
    #[error("map has {0} free cell(s) unreachable from the start")]
    Disconnected(usize),
}

/// Chooses among the applicable actions at each rollout step.
pub trait ActionChooser {
    fn choose(&mut self, applicable: &[ActionKind]) -> ActionKind;
}

/// Uniform draw from a seeded generator.
#[derive(Debug, Clone)]
pub struct RandomChooser(ChaCha8Rng);

impl RandomChooser {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl ActionChooser for RandomChooser {
    fn choose(&mut self, applicable: &[ActionKind]) -> ActionKind {
        applicable[self.0.random_range(0..applicable.len())]
    }
}

/// Plays back a fixed action sequence, then repeats its last element.
#[derive(Debug, Clone)]
pub struct ScriptedChooser {
    script: Vec<ActionKind>,
    next: usize,
}

impl ScriptedChooser {
    pub fn new(script: Vec<ActionKind>) -> Self {
        Self { script, next: 0 }
    }
}

impl ActionChooser for ScriptedChooser {
    fn choose(&mut self, applicable: &[ActionKind]) -> ActionKind {
        let pick = self.script.get(self.next).or(self.script.last()).copied().unwrap_or(applicable[0]);
        self.next += 1;
        pick
    }
}

/// One expansion, as written to the rollout log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub rollout: usize,
    pub action: ActionKind,
    /// New child, or the evaluated node for an evaluation.
    pub node: usize,
    pub q: f64,
    pub valid: bool,
}

pub fn write_rollout_log(records: &[RolloutRecord], path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub node: usize,
    pub trajectory: Trajectory,
    pub q: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    /// The root candidate followed by each rollout's final node, first
    /// occurrence only.
    pub candidates: Vec<Candidate>,
    pub best: Trajectory,
    pub best_q: f64,
    pub best_node: usize,
    pub tree: SearchTree,
    pub rollout_log: Vec<RolloutRecord>,
    pub rollouts_completed: usize,
    /// Set when the backend became unavailable and the search stopped early.
    pub aborted: Option<String>,
}

/// 64-bit mix for deriving per-call proposer seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Search state shared by the expansion steps.
pub struct Search<'a, P: Proposer + ?Sized> {
    pub ctx: PlanningContext<'a>,
    pub proposer: &'a P,
    pub config: MctsConfig,
    pub tree: SearchTree,
    seed: u64,
    calls: u64,
}

impl<'a, P: Proposer + ?Sized> Search<'a, P> {
    pub fn new(ctx: PlanningContext<'a>, proposer: &'a P, config: MctsConfig, seed: u64) -> Self {
        Self { ctx, proposer, config, tree: SearchTree::default(), seed, calls: 0 }
    }

    fn next_seed(&mut self) -> u64 {
        let s = if self.calls == 0 { self.seed } else { mix_seed(self.seed, self.calls) };
        self.calls += 1;
        s
    }

    /// Compliance from an evaluation call; parse failures count as 0.
    fn evaluate(&mut self, path: &Trajectory, feedback: Option<String>) -> Result<(f64, Option<bool>), ProposerError> {
        let seed = self.next_seed();
        match self.proposer.propose(&ProposerAction::evaluate(path.clone(), feedback), &self.ctx, seed) {
            Ok(reply) => Ok((reply.compliance.unwrap_or(0.0).clamp(0.0, 1.0), reply.verdict)),
            Err(e) if e.is_fatal() => Err(e),
            Err(e) => {
                log::debug!("evaluation reply rejected: {e}");
                Ok((0.0, None))
            }
        }
    }

    fn make_node(&mut self, parent: Option<usize>, kind: ActionKind, reply: Result<Trajectory, String>) -> Result<SearchNode, ProposerError> {
        let (trajectory, check) = match reply {
            Ok(t) => {
                let check = check_candidate(self.ctx.map, self.ctx.start, &t);
                (t, check)
            }
            Err(msg) => (Trajectory::default(), Err(msg)),
        };
        let valid = check.is_ok();
        let (compliance, coverage_rate, reward) = if valid {
            let (compliance, _) = self.evaluate(&trajectory, None)?;
            let cr = coverage_rate(self.ctx.map, self.ctx.coverage, &trajectory);
            let q = score_node(self.ctx.map, self.ctx.coverage, self.ctx.start, &trajectory, &self.config.weights, compliance);
            (compliance, cr, q)
        } else {
            (0.0, None, 0.0)
        };
        Ok(SearchNode {
            id: 0,
            trajectory,
            q_value: reward,
            reward,
            visits: 0,
            parent,
            children: Vec::new(),
            depth: 0,
            produced_by: kind,
            feedback: check.err(),
            valid,
            compliance,
            verdict: None,
            coverage_rate,
        })
    }

    /// Creates the root from a generation request.
    pub fn init_root(&mut self) -> Result<usize, SearchError> {
        let seed = self.next_seed();
        let reply = match self.proposer.propose(&ProposerAction::generate(), &self.ctx, seed) {
            Ok(r) => Ok(r.trajectory.unwrap_or_default()),
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(e) => Err(format!("Error: reply could not be used: {e}")),
        };
        let node = self.make_node(None, ActionKind::Generate, reply)?;
        self.tree = SearchTree::default();
        Ok(self.tree.push(node))
    }

    /// Applies `kind` at node `id`. Trajectory actions attach and return a new
    /// child; evaluation re-scores `id` in place and returns `None`.
    pub fn expand(&mut self, id: usize, kind: ActionKind) -> Result<Option<usize>, SearchError> {
        if !self.tree.applicable_actions(id).contains(&kind) {
            return Err(SearchError::NotApplicable { kind, node: id });
        }
        let node = self.tree.node(id).clone();
        if kind == ActionKind::Evaluate {
            let (compliance, verdict) = self.evaluate(&node.trajectory, node.feedback.clone())?;
            let reward = score_node(self.ctx.map, self.ctx.coverage, self.ctx.start, &node.trajectory, &self.config.weights, compliance);
            let best_child = node.children.iter().map(|&c| self.tree.node(c).q_value).fold(f64::NEG_INFINITY, f64::max);
            let alpha = self.config.alpha;
            let n = self.tree.node_mut(id);
            n.compliance = compliance;
            n.verdict = verdict.or(n.verdict);
            n.reward = reward;
            n.q_value = if best_child.is_finite() { (1.0 - alpha) * reward + alpha * best_child } else { reward };
            return Ok(None);
        }
        let action = match kind {
            ActionKind::Generate => ProposerAction::generate(),
            ActionKind::Regenerate => {
                ProposerAction::regenerate(node.trajectory.clone(), node.feedback.clone().unwrap_or_default())
            }
            _ => ProposerAction::finetune(node.trajectory.clone()),
        };
        let seed = self.next_seed();
        let reply = match self.proposer.propose(&action, &self.ctx, seed) {
            Ok(r) => Ok(r.trajectory.unwrap_or_default()),
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(e) => Err(format!("Error: reply could not be used: {e}")),
        };
        let child = self.make_node(Some(id), kind, reply)?;
        Ok(Some(self.tree.push(child)))
    }

    fn is_terminal(&self, id: usize) -> bool {
        let n = self.tree.node(id);
        if n.depth >= self.config.max_depth {
            return true;
        }
        id != 0 && (n.coverage_rate.is_some_and(|cr| cr >= self.config.terminal_cr) || n.verdict == Some(false))
    }

    /// Runs rollouts on an initialized tree.
    pub fn rollouts(
        &mut self,
        chooser: &mut dyn ActionChooser,
        observer: &mut dyn FnMut(&RolloutRecord),
    ) -> (Vec<usize>, Vec<RolloutRecord>, usize, Option<String>) {
        let mut finals = Vec::new();
        let mut log = Vec::new();
        for rollout in 0..self.config.n_rollouts {
            let mut s = 0;
            let mut arrived = true;
            for _ in 0..self.config.max_depth {
                if arrived {
                    self.tree.node_mut(s).visits += 1;
                }
                if self.is_terminal(s) {
                    break;
                }
                let applicable = self.tree.applicable_actions(s);
                let kind = chooser.choose(&applicable);
                let touched = match self.expand(s, kind) {
                    Ok(child) => child.unwrap_or(s),
                    Err(e) => {
                        finals.push(s);
                        return (finals, log, rollout, Some(e.to_string()));
                    }
                };
                self.tree.backpropagate(touched, self.config.alpha);
                let n = self.tree.node(touched);
                let record = RolloutRecord { rollout, action: kind, node: touched, q: n.q_value, valid: n.valid };
                observer(&record);
                log.push(record);
                let next = self.tree.best_child(s, self.config.omega, self.config.epsilon).unwrap_or(s);
                arrived = next != s;
                s = next;
            }
            finals.push(s);
        }
        (finals, log, self.config.n_rollouts, None)
    }

    pub fn finish(self, finals: Vec<usize>, log: Vec<RolloutRecord>, completed: usize, aborted: Option<String>) -> SearchResult {
        let mut candidates: Vec<Candidate> = Vec::new();
        for id in std::iter::once(0).chain(finals) {
            if candidates.iter().any(|c| c.node == id) {
                continue;
            }
            let n = self.tree.node(id);
            candidates.push(Candidate { node: id, trajectory: n.trajectory.clone(), q: n.reward, valid: n.valid });
        }
        let best = candidates.iter().fold(&candidates[0], |b, c| if c.q > b.q { c } else { b }).clone();
        SearchResult {
            candidates,
            best: best.trajectory,
            best_q: best.q,
            best_node: best.node,
            tree: self.tree,
            rollout_log: log,
            rollouts_completed: completed,
            aborted,
        }
    }
}

fn check_inputs(ctx: &PlanningContext<'_>, config: &MctsConfig) -> Result<(), SearchError> {
    config.validate()?;
    let unreachable = ctx.map.unreachable_free_cells().len();
    if unreachable > 0 {
        return Err(SearchError::Disconnected(unreachable));
    }
    Ok(())
}

/// Full search with a seeded uniform action draw.
pub fn run_search<P: Proposer + ?Sized>(
    ctx: &PlanningContext<'_>,
    proposer: &P,
    config: &MctsConfig,
    seed: u64,
) -> Result<SearchResult, SearchError> {
    let mut chooser = RandomChooser::new(mix_seed(seed, u64::MAX));
    run_search_with(ctx, proposer, config, seed, &mut chooser, &mut |_| {})
}

/// Full search with an explicit action chooser and a callback per expansion.
pub fn run_search_with<P: Proposer + ?Sized>(
    ctx: &PlanningContext<'_>,
    proposer: &P,
    config: &MctsConfig,
    seed: u64,
    chooser: &mut dyn ActionChooser,
    observer: &mut dyn FnMut(&RolloutRecord),
) -> Result<SearchResult, SearchError> {
    check_inputs(ctx, config)?;
    let mut search = Search::new(*ctx, proposer, *config, seed);
    search.init_root()?;
    let (finals, log, completed, aborted) = search.rollouts(chooser, observer);
    Ok(search.finish(finals, log, completed, aborted))
}

/// One generation request, validated and scored like a search root.
pub fn single_shot<P: Proposer + ?Sized>(
    ctx: &PlanningContext<'_>,
    proposer: &P,
    config: &MctsConfig,
    seed: u64,
) -> Result<SearchResult, SearchError> {
    let config = MctsConfig { n_rollouts: 0, ..*config };
    run_search(ctx, proposer, &config, seed)
}
