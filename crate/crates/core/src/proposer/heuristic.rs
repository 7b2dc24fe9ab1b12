//! Deterministic rule-based backend: greedy boustrophedon tours with
//! breadth-first jumps between disconnected targets.

use crate::grid::{validate_path, Cell, CoverageMap, GridMap, Trajectory};

use super::intent::{Intent, Mode};
use super::parse::parse_reply;
use super::prompt::serialize_trajectory;
use super::tour::refine_tour;
use super::{ActionKind, PlanningContext, Proposer, ProposerAction, ProposerError, ProposerReply};

/// Sweep pattern, chosen from the low four bits of a seed. Orientation flags
/// are relative to the start corner, so variant 0 always sweeps rows
/// beginning with the row the vehicle is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SweepVariant {
    pub by_columns: bool,
    pub flip_major: bool,
    pub flip_minor: bool,
    /// Prefer the neighbour with the fewest onward targets before sweep order.
    pub warnsdorff: bool,
}

impl SweepVariant {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            by_columns: seed & 1 != 0,
            flip_major: seed & 2 != 0,
            flip_minor: seed & 4 != 0,
            warnsdorff: seed & 8 != 0,
        }
    }

    /// Serpentine position of `cell` in the sweep anchored at `start`.
    pub fn rank(&self, map: &GridMap, start: Cell, cell: Cell) -> u64 {
        let (h, w) = (map.height() as i64, map.width() as i64);
        let (r, c) = (cell.row as i64, cell.col as i64);
        let r = if 2 * start.row as i64 >= h { h - 1 - r } else { r };
        let c = if 2 * start.col as i64 >= w { w - 1 - c } else { c };
        let (major, minor, major_span, span) = if self.by_columns { (c, r, w, h) } else { (r, c, h, w) };
        let major = if self.flip_major { major_span - 1 - major } else { major };
        let minor = if self.flip_minor { span - 1 - minor } else { minor };
        let minor = if major % 2 == 1 { span - 1 - minor } else { minor };
        (major * span + minor) as u64
    }
}

/// Greedy tour from `start` visiting every cell of `phases[0]`, then every
/// remaining cell of `phases[1]`, and so on. Moves to an adjacent pending
/// target when one exists, otherwise along a shortest path to the nearest
/// one. Unreachable targets are skipped. The tour begins with `start`.
pub fn coverage_tour(map: &GridMap, start: Cell, phases: &[Vec<Cell>], variant: SweepVariant) -> Trajectory {
    let mut pending = vec![0usize; map.cell_count()];
    for (k, phase) in phases.iter().enumerate() {
        for &cell in phase {
            if let Some(i) = map.index(cell) {
                if map.is_free(cell) && pending[i] == 0 {
                    pending[i] = k + 1;
                }
            }
        }
    }
    let mut path = vec![start];
    if let Some(i) = map.index(start) {
        pending[i] = 0;
    }
    if !map.is_free(start) {
        return Trajectory::new(path);
    }
    let rank = |cell: Cell| variant.rank(map, start, cell);
    let mut cur = start;
    for phase in 1..=phases.len() {
        let in_phase = |pending: &[usize], cell: Cell| map.index(cell).is_some_and(|i| pending[i] == phase);
        loop {
            let next = map
                .free_neighbors(cur)
                .filter(|&n| in_phase(&pending, n))
                .min_by_key(|&n| {
                    let degree = if variant.warnsdorff {
                        map.free_neighbors(n).filter(|&m| in_phase(&pending, m)).count()
                    } else {
                        0
                    };
                    (degree, rank(n))
                });
            let leg = match next {
                Some(n) => vec![n],
                None => {
                    let dist = map.distances_from(cur);
                    let target = map
                        .free_cells()
                        .filter(|&c| in_phase(&pending, c))
                        .filter_map(|c| dist[map.index(c).unwrap()].map(|d| (d, rank(c), c)))
                        .min();
                    let Some((_, _, target)) = target else { break };
                    map.shortest_path(cur, target).expect("reachable target has a path")[1..].to_vec()
                }
            };
            for cell in leg {
                pending[map.index(cell).unwrap()] = 0;
                path.push(cell);
                cur = cell;
            }
        }
    }
    Trajectory::new(path)
}

/// Free cells already covered, counting the vehicle's own cell.
fn covered(map: &GridMap, coverage: &CoverageMap, at: Cell) -> usize {
    map.free_cells().filter(|&c| c == at || coverage.count(c) > 0).count()
}

/// Target phases for an instruction: cells still unvisited under `coverage`,
/// ordered so the instruction is honoured.
fn target_phases(map: &GridMap, coverage: &CoverageMap, intent: &Intent, start: Cell) -> Vec<Vec<Cell>> {
    let open: Vec<Cell> = map.free_cells().filter(|&c| c != start && coverage.count(c) == 0).collect();
    let (inside, outside): (Vec<Cell>, Vec<Cell>) = open.iter().partition(|&&c| intent.in_region(map, c));
    match intent.mode {
        Mode::Complete => vec![open],
        Mode::Focused => vec![inside, outside],
        Mode::Rapid => vec![outside, inside],
    }
}

/// The rule-based backend. Generation and refinement follow the instruction
/// keywords; evaluation simulates the candidate and asks for more exploration
/// while the resulting coverage rate is below `terminal_cr`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeuristicProposer {
    pub terminal_cr: f64,
    /// Annealing moves spent reordering each tour.
    pub anneal_steps: usize,
}

impl Default for HeuristicProposer {
    fn default() -> Self {
        Self { terminal_cr: 0.95, anneal_steps: 20_000 }
    }
}

impl HeuristicProposer {
    pub fn new(terminal_cr: f64) -> Self {
        Self { terminal_cr, ..Self::default() }
    }

    fn extend(&self, ctx: &PlanningContext<'_>, prefix: Vec<Cell>, intent: &Intent, seed: u64) -> Trajectory {
        let Some(&end) = prefix.last() else {
            return self.generate(ctx, intent, seed);
        };
        let so_far = Trajectory::new(prefix.clone());
        let coverage = ctx.coverage.simulate_plan(ctx.map, &so_far).unwrap_or_else(|_| ctx.coverage.clone());
        let need = self.need(ctx.map);
        if covered(ctx.map, ctx.coverage, ctx.start) < need && covered(ctx.map, &coverage, end) >= need {
            return self.cut_at_need(ctx.map, ctx.coverage, so_far);
        }
        let tail = self.tour(ctx.map, &coverage, end, intent, seed);
        prefix.into_iter().chain(tail.into_waypoints().into_iter().skip(1)).collect()
    }

    fn generate(&self, ctx: &PlanningContext<'_>, intent: &Intent, seed: u64) -> Trajectory {
        self.tour(ctx.map, ctx.coverage, ctx.start, intent, seed)
    }

    /// Free cells needed to reach `terminal_cr`.
    fn need(&self, map: &GridMap) -> usize {
        ((self.terminal_cr * map.free_count() as f64) - 1e-9).ceil().max(0.0) as usize
    }

    /// Shortest prefix of `path` that brings coverage up to `terminal_cr`.
    fn cut_at_need(&self, map: &GridMap, coverage: &CoverageMap, path: Trajectory) -> Trajectory {
        let need = self.need(map);
        let mut seen = coverage.clone();
        let mut n = seen.visited_count();
        let mut out = Vec::new();
        for cell in path.into_waypoints() {
            if seen.count(cell) == 0 && seen.visit(map, cell).is_ok() {
                n += 1;
            }
            out.push(cell);
            if n >= need {
                break;
            }
        }
        Trajectory::new(out)
    }

    /// Seeded greedy sweep, then refined. While coverage is below
    /// `terminal_cr` the tour stops as soon as it gets there; after that it
    /// covers every remaining cell.
    fn tour(&self, map: &GridMap, coverage: &CoverageMap, from: Cell, intent: &Intent, seed: u64) -> Trajectory {
        let phases = target_phases(map, coverage, intent, from);
        let greedy = coverage_tour(map, from, &phases, SweepVariant::from_seed(seed));
        let need = self.need(map);
        let covered = covered(map, coverage, from);
        if covered >= need {
            return refine_tour(map, coverage, &greedy, &phases, 0, self.anneal_steps, seed);
        }
        let targets: usize = phases.iter().map(Vec::len).sum();
        let skippable = (covered + targets).saturating_sub(need);
        let walk = refine_tour(map, coverage, &greedy, &phases, skippable, self.anneal_steps, seed);
        self.cut_at_need(map, coverage, walk)
    }

    /// Keep the usable waypoints of `prior` and reconnect them with shortest
    /// paths, starting from the current position.
    fn repair(&self, ctx: &PlanningContext<'_>, prior: &Trajectory) -> Vec<Cell> {
        let mut out = vec![ctx.start];
        for &cell in prior.iter() {
            let cur = *out.last().unwrap();
            if cell == cur || !ctx.map.is_free(cell) {
                continue;
            }
            if let Some(leg) = ctx.map.shortest_path(cur, cell) {
                out.extend_from_slice(&leg[1..]);
            }
        }
        out
    }

    /// Longest prefix of a valid `prior` that only adds new cells in the order
    /// the instruction asks for.
    fn compliant_prefix(&self, ctx: &PlanningContext<'_>, prior: &Trajectory, intent: &Intent) -> Vec<Cell> {
        let mut coverage = ctx.coverage.clone();
        let mut phases = target_phases(ctx.map, ctx.coverage, intent, ctx.start);
        let mut out = Vec::new();
        for (i, &cell) in prior.iter().enumerate() {
            let fresh = coverage.count(cell) == 0;
            if i > 0 && !fresh {
                break;
            }
            if i > 0 {
                let phase = phases.iter().position(|p| p.contains(&cell));
                let earliest_open = phases.iter().position(|p| !p.is_empty());
                if phase.is_some() && phase > earliest_open {
                    break;
                }
                if let Some(k) = phase {
                    phases[k].retain(|&c| c != cell);
                }
            }
            if fresh {
                let _ = coverage.visit(ctx.map, cell);
            }
            out.push(cell);
        }
        out
    }

    fn evaluate(&self, ctx: &PlanningContext<'_>, prior: &Trajectory, intent: &Intent) -> (f64, bool) {
        match ctx.coverage.simulate_plan(ctx.map, prior) {
            Ok(after) => {
                let covered = ctx.map.free_cells().filter(|&c| after.count(c) > 0).count();
                let cr = covered as f64 / ctx.map.free_count() as f64;
                (intent.compliance(ctx.map, &after, prior), cr < self.terminal_cr)
            }
            Err(_) => (0.0, true),
        }
    }
}

impl Proposer for HeuristicProposer {
    fn id(&self) -> String {
        "heuristic".to_string()
    }

    fn propose(&self, action: &ProposerAction, ctx: &PlanningContext<'_>, seed: u64) -> Result<ProposerReply, ProposerError> {
        if ctx.instruction.text.trim().is_empty() {
            return Err(ProposerError::EmptyInstruction);
        }
        let intent = Intent::from_text(&ctx.instruction.text);
        let prior = || action.prior().ok_or(ProposerError::MissingPrior(action.kind()));
        let trajectory = match action.kind() {
            ActionKind::Generate => self.generate(ctx, &intent, seed),
            ActionKind::Regenerate => {
                let repaired = self.repair(ctx, prior()?);
                self.extend(ctx, repaired, &intent, seed)
            }
            ActionKind::Finetune => {
                let prior = prior()?;
                let usable = validate_path(ctx.map, prior).valid && prior.first() == Some(ctx.start);
                let prefix = if usable { self.compliant_prefix(ctx, prior, &intent) } else { self.repair(ctx, prior) };
                self.extend(ctx, prefix, &intent, seed)
            }
            ActionKind::Evaluate => {
                let (score, more) = self.evaluate(ctx, prior()?, &intent);
                let raw = format!("score: {score:.6}\nverdict: {}", if more { "continue" } else { "stop" });
                return Ok(parse_reply(ActionKind::Evaluate, &raw)?);
            }
        };
        Ok(ProposerReply::with_trajectory(trajectory.clone(), serialize_trajectory(&trajectory)))
    }
}
