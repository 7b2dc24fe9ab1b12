use std::collections::VecDeque;
use std::sync::Mutex;

use coverage_pilot::grid::{generate_map, validate_path, Cell, CoverageMap, CoverageSets, GridMap, Trajectory};
use coverage_pilot::mcts::{
    reward, run_search, run_search_with, score_node, single_shot, uct_score, MctsConfig, RewardWeights, ScriptedChooser,
    Search, SearchError, SearchNode, SearchTree,
};
use coverage_pilot::proposer::{
    parse_reply, ActionKind, HeuristicProposer, Instruction, PlanningContext, Proposer, ProposerAction,
    ProposerError, ProposerReply,
};
use proptest::prelude::*;

fn path(v: &[(i32, i32)]) -> Trajectory {
    v.iter().map(|&(r, c)| Cell::new(r, c)).collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

#[test]
fn uct_examples() {
    assert_eq!(uct_score(0.7, 5, 0, 1.4, 1e-6), 0.7);
    assert!((uct_score(0.0, 0, 1, 1.0, 1.0) - 0.8326).abs() < 1e-4);
    assert!(close(uct_score(0.0, 0, 1, 1.0, 1.0), 2f64.ln().sqrt()));
    let oracle = 0.5 + 1.4 * (11f64.ln() / (3.0 + 1e-6)).sqrt();
    assert!(close(uct_score(0.5, 3, 10, 1.4, 1e-6), oracle));
    assert!((oracle - 1.7517).abs() < 1e-4);
}

#[test]
fn reward_examples() {
    let w = RewardWeights { c1: 1.0, c2: 1.0, c3: 1.0 };
    assert_eq!(reward(CoverageSets { free: 9, visited: 9, revisited: 0 }, &w, 1.0), 2.0);
    let w = RewardWeights::default();
    let q = reward(CoverageSets { free: 100, visited: 50, revisited: 5 }, &w, 0.8);
    assert!(close(q, 0.5 - 0.05 + 0.4));
    assert_eq!(reward(CoverageSets { free: 10, visited: 0, revisited: 0 }, &w, 0.0), 0.0);
}

#[test]
fn score_node_simulates_from_prior_coverage() {
    let map = GridMap::new(10, 10, [], Cell::new(9, 0)).unwrap();
    let mut before = CoverageMap::new(&map);
    // 45 cells of row-major sweep already flown
    let flown: Vec<Cell> = (0..45).map(|i| Cell::new(i / 10, if (i / 10) % 2 == 0 { i % 10 } else { 9 - i % 10 })).collect();
    before = before.apply_path(&map, &Trajectory::new(flown.clone())).unwrap();
    let start = *flown.last().unwrap();
    assert_eq!(start, Cell::new(4, 4));
    // five new cells along row 4, then back to the start: 50 visited, 5 revisited
    let mut walk = vec![start];
    walk.extend((5..10).map(|c| Cell::new(4, c)));
    walk.extend((4..9).rev().map(|c| Cell::new(4, c)));
    let t = Trajectory::new(walk);
    let after = before.simulate_plan(&map, &t).unwrap();
    assert_eq!((after.visited_count(), after.revisited_count()), (50, 5));
    let w = RewardWeights::default();
    let q = score_node(&map, &before, start, &t, &w, 0.8);
    assert!(close(q, 0.5 - 0.05 + 0.4), "{q}");
    let bad = path(&[(4, 4), (6, 6)]);
    assert_eq!(score_node(&map, &before, Cell::new(4, 4), &bad, &w, 1.0), 0.0);
    // valid path from the wrong cell
    assert_eq!(score_node(&map, &before, Cell::new(0, 0), &t, &w, 1.0), 0.0);
}

fn leaf(parent: Option<usize>, q: f64, visits: u32) -> SearchNode {
    SearchNode {
        id: 0,
        trajectory: Trajectory::default(),
        q_value: q,
        reward: q,
        visits,
        parent,
        children: vec![],
        depth: 0,
        produced_by: ActionKind::Finetune,
        feedback: None,
        valid: true,
        compliance: 0.0,
        verdict: None,
        coverage_rate: None,
    }
}

#[test]
fn backprop_examples() {
    let mut tree = SearchTree::default();
    tree.push(leaf(None, 0.4, 1));
    tree.push(leaf(Some(0), 0.8, 0));
    let c = tree.push(leaf(Some(0), 0.2, 0));
    tree.backpropagate(c, 0.5);
    assert!(close(tree.node(0).q_value, 0.6));

    let mut tree = SearchTree::default();
    tree.push(leaf(None, 0.1, 1));
    let a = tree.push(leaf(Some(0), 0.3, 1));
    let b = tree.push(leaf(Some(a), 0.9, 0));
    tree.backpropagate(b, 1.0);
    assert!(close(tree.node(a).q_value, 0.9));
    assert!(close(tree.node(0).q_value, 0.9));

    let mut tree = SearchTree::default();
    tree.push(leaf(None, 0.5, 1));
    let a = tree.push(leaf(Some(0), 0.5, 0));
    for alpha in [0.1, 0.5, 1.0] {
        tree.backpropagate(a, alpha);
        assert_eq!(tree.node(0).q_value, 0.5);
    }
}

#[test]
fn select_leaf_examples() {
    let cfg = MctsConfig { omega: 1.4, epsilon: 1.0, ..MctsConfig::default() };
    let mut tree = SearchTree::default();
    tree.push(leaf(None, 0.0, 5));
    assert_eq!(tree.select_leaf(&cfg), 0);
    let a = tree.push(leaf(Some(0), 0.9, 5));
    let b = tree.push(leaf(Some(0), 0.1, 0));
    let ua = 0.9 + 1.4 * (6f64.ln() / 6.0).sqrt();
    let ub = 0.1 + 1.4 * (6f64.ln() / 1.0).sqrt();
    assert_eq!(tree.select_leaf(&cfg), if ua > ub { a } else { b });

    let mut tree = SearchTree::default();
    tree.push(leaf(None, 0.0, 3));
    let first = tree.push(leaf(Some(0), 0.4, 1));
    tree.push(leaf(Some(0), 0.4, 1));
    assert_eq!(tree.select_leaf(&cfg), first);
}

fn ctx<'a>(map: &'a GridMap, cov: &'a CoverageMap, instr: &'a Instruction) -> PlanningContext<'a> {
    PlanningContext { map, coverage: cov, instruction: instr, start: map.start() }
}

#[test]
fn expansion_examples() {
    let map = GridMap::open(3, 3, Cell::new(0, 0)).unwrap();
    let cov = CoverageMap::new(&map);
    let instr = Instruction::new("complete coverage", 0).unwrap();
    let p = HeuristicProposer::default();
    let mut s = Search::new(ctx(&map, &cov, &instr), &p, MctsConfig::default(), 0);
    let root = s.init_root().unwrap();
    let t = &s.tree.node(root).trajectory;
    assert_eq!(CoverageMap::new(&map).apply_path(&map, t).unwrap().visited_count(), 9);
    let child = s.expand(root, ActionKind::Finetune).unwrap().unwrap();
    assert!(matches!(
        s.expand(child, ActionKind::Generate),
        Err(SearchError::NotApplicable { kind: ActionKind::Generate, .. })
    ));
    assert!(matches!(s.expand(child, ActionKind::Regenerate), Err(SearchError::NotApplicable { .. })));
}

/// Answers trajectory requests and evaluations from two fixed queues.
struct Scripted {
    paths: Mutex<VecDeque<&'static str>>,
    evals: Mutex<VecDeque<&'static str>>,
    seen: Mutex<Vec<ActionKind>>,
}

impl Scripted {
    fn new(paths: &[&'static str], evals: &[&'static str]) -> Self {
        Self {
            paths: Mutex::new(paths.iter().copied().collect()),
            evals: Mutex::new(evals.iter().copied().collect()),
            seen: Mutex::new(vec![]),
        }
    }
}

impl Proposer for Scripted {
    fn id(&self) -> String {
        "scripted".into()
    }

    fn propose(&self, action: &ProposerAction, _: &PlanningContext<'_>, _: u64) -> Result<ProposerReply, ProposerError> {
        self.seen.lock().unwrap().push(action.kind());
        let queue = if action.kind() == ActionKind::Evaluate { &self.evals } else { &self.paths };
        let raw = queue.lock().unwrap().pop_front().expect("script exhausted");
        Ok(parse_reply(action.kind(), raw)?)
    }
}

#[test]
fn regenerate_carries_collision_feedback() {
    let map = GridMap::new(3, 3, [Cell::new(1, 1)], Cell::new(0, 0)).unwrap();
    let cov = CoverageMap::new(&map);
    let instr = Instruction::new("complete coverage", 0).unwrap();
    let stub = Scripted::new(&["[[0,0],[0,1],[1,1]]", "[[0,0],[0,1],[0,2]]"], &["score: 1\nverdict: stop"]);
    let mut s = Search::new(ctx(&map, &cov, &instr), &stub, MctsConfig::default(), 0);
    let root = s.init_root().unwrap();
    let node = s.tree.node(root);
    assert!(!node.valid);
    assert_eq!(node.q_value, 0.0);
    assert!(node.feedback.as_ref().unwrap().contains("no-fly zone at coordinates (1, 1)"));
    assert_eq!(s.tree.applicable_actions(root), vec![ActionKind::Generate, ActionKind::Regenerate]);
    let child = s.expand(root, ActionKind::Regenerate).unwrap().unwrap();
    assert!(s.tree.node(child).valid);
    assert!(validate_path(&map, &s.tree.node(child).trajectory).valid);
}

#[test]
fn unparseable_reply_becomes_an_invalid_node() {
    let map = GridMap::open(3, 3, Cell::new(0, 0)).unwrap();
    let cov = CoverageMap::new(&map);
    let instr = Instruction::new("complete coverage", 0).unwrap();
    let stub = Scripted::new(&["I cannot plan here."], &[]);
    let cfg = MctsConfig { n_rollouts: 0, ..MctsConfig::default() };
    let r = run_search(&ctx(&map, &cov, &instr), &stub, &cfg, 0).unwrap();
    assert!(!r.tree.node(0).valid);
    assert_eq!(r.best_q, 0.0);
}

/// Two rollouts against fixed replies, compared with a hand trace.
#[test]
fn two_rollouts_match_hand_trace() {
    let map = GridMap::open(3, 3, Cell::new(0, 0)).unwrap();
    let cov = CoverageMap::new(&map);
    let instr = Instruction::new("complete coverage", 0).unwrap();
    let stub = Scripted::new(
        &[
            "[[0,0],[0,1]]",
            "[[0,0],[0,1],[0,2],[1,2]]",
            "[[0,0],[1,1]]",
            "[[0,0],[1,0],[2,0],[2,1]]",
        ],
        &[
            "score: 0.5\nverdict: continue",
            "score: 0.5\nverdict: continue",
            "score: 0.9\nverdict: continue",
            "score: 0.2\nverdict: continue",
            "score: 1.0\nverdict: stop",
        ],
    );
    let cfg = MctsConfig {
        omega: 1.0,
        epsilon: 1.0,
        alpha: 0.5,
        weights: RewardWeights { c1: 1.0, c2: 0.5, c3: 0.5 },
        n_rollouts: 2,
        max_depth: 3,
        terminal_cr: 1.0,
    };
    let mut chooser = ScriptedChooser::new(vec![
        ActionKind::Finetune,
        ActionKind::Evaluate,
        ActionKind::Finetune,
        ActionKind::Generate,
        ActionKind::Evaluate,
    ]);
    let r = run_search_with(&ctx(&map, &cov, &instr), &stub, &cfg, 0, &mut chooser, &mut |_| {}).unwrap();

    // hand trace
    let q0 = 2.0 / 9.0 + 0.5 * 0.5;
    let q1 = 4.0 / 9.0 + 0.5 * 0.5;
    let root_after_1 = 0.5 * q0 + 0.5 * q1;
    let q1_eval = 4.0 / 9.0 + 0.5 * 0.9;
    let root_after_eval = 0.5 * root_after_1 + 0.5 * q1_eval;
    let q1_final: f64 = 0.5 * q1_eval + 0.5 * 0.0;
    let root_after_bad = 0.5 * root_after_eval + 0.5 * q1_final;
    let q3 = 4.0 / 9.0 + 0.5 * 0.2;
    let root_after_gen = 0.5 * root_after_bad + 0.5 * q1_final.max(q3);
    // rollout 2 descends to node 3: UCT favours the unvisited sibling
    let u1 = q1_final + (3f64.ln() / 2.0).sqrt();
    let u3 = q3 + (3f64.ln() / 1.0).sqrt();
    assert!(u3 > u1);
    let q3_eval = 4.0 / 9.0 + 0.5 * 1.0;
    let root_final = 0.5 * root_after_gen + 0.5 * q3_eval;

    let t = &r.tree;
    assert_eq!(t.len(), 4);
    let q: Vec<f64> = t.nodes().iter().map(|n| n.q_value).collect();
    let n: Vec<u32> = t.nodes().iter().map(|n| n.visits).collect();
    for (got, want) in q.iter().zip([root_final, q1_final, 0.0, q3_eval]) {
        assert!(close(*got, want), "{q:?}");
    }
    assert_eq!(n, vec![2, 1, 0, 1]);
    assert!(!t.node(2).valid);
    assert_eq!(t.node(3).verdict, Some(false));
    let cands: Vec<usize> = r.candidates.iter().map(|c| c.node).collect();
    assert_eq!(cands, vec![0, 2, 3]);
    assert_eq!(r.best_node, 3);
    assert!(close(r.best_q, q3_eval));
    let actions: Vec<ActionKind> = r.rollout_log.iter().map(|e| e.action).collect();
    assert_eq!(actions, vec![ActionKind::Finetune, ActionKind::Evaluate, ActionKind::Finetune, ActionKind::Generate, ActionKind::Evaluate]);
    assert_eq!(r.rollout_log.iter().map(|e| e.rollout).collect::<Vec<_>>(), vec![0, 0, 0, 1, 1]);
    assert!(stub.paths.lock().unwrap().is_empty() && stub.evals.lock().unwrap().is_empty());
}

#[test]
fn zero_rollouts_returns_root() {
    let map = generate_map(10, 10, 0.15, 1).unwrap();
    let cov = CoverageMap::new(&map);
    let instr = Instruction::new("complete coverage", 0).unwrap();
    let cfg = MctsConfig { n_rollouts: 0, ..MctsConfig::default() };
    let r = run_search(&ctx(&map, &cov, &instr), &HeuristicProposer::default(), &cfg, 5).unwrap();
    assert_eq!(r.candidates.len(), 1);
    assert_eq!(r.best, r.tree.node(0).trajectory);
    assert!(r.rollout_log.is_empty());
}

#[test]
fn empty_five_by_five_is_covered_without_revisits() {
    let map = GridMap::open(5, 5, Cell::new(4, 0)).unwrap();
    let cov = CoverageMap::new(&map);
    let instr = Instruction::new("complete coverage", 0).unwrap();
    let cfg = MctsConfig { n_rollouts: 4, terminal_cr: 1.0, ..MctsConfig::default() };
    let r = run_search(&ctx(&map, &cov, &instr), &HeuristicProposer::new(1.0), &cfg, 0).unwrap();
    let after = cov.apply_path(&map, &r.best).unwrap();
    assert_eq!(after.visited_count(), 25);
    assert_eq!(after.revisited_count(), 0);
}

#[test]
fn search_properties_on_generated_maps() {
    let instr = Instruction::new("complete coverage", 0).unwrap();
    let p = HeuristicProposer::default();
    for seed in 0..12 {
        let map = generate_map(10, 10, 0.25, seed).unwrap();
        let cov = CoverageMap::new(&map);
        let c = ctx(&map, &cov, &instr);
        let cfg = MctsConfig::default();
        let r = run_search(&c, &p, &cfg, seed).unwrap();
        // best maximizes the rescored reward over the candidates
        let rescored: Vec<f64> = r
            .candidates
            .iter()
            .map(|cand| {
                let n = r.tree.node(cand.node);
                score_node(&map, &cov, map.start(), &cand.trajectory, &cfg.weights, n.compliance)
            })
            .collect();
        let max = rescored.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(close(r.best_q, max));
        for n in r.tree.nodes() {
            if n.valid {
                assert!(validate_path(&map, &n.trajectory).valid);
            } else {
                assert_eq!(n.q_value, 0.0);
            }
            let child_visits: u32 = n.children.iter().map(|&c| r.tree.node(c).visits).sum();
            assert!(child_visits <= n.visits, "node {}", n.id);
            for &c in &n.children {
                assert_eq!(r.tree.node(c).parent, Some(n.id));
            }
        }
        assert_eq!(r.tree.node(0).visits as usize, cfg.n_rollouts);
        // mcts never does worse than its own root, which is the single-shot plan
        let one = single_shot(&c, &p, &cfg, seed).unwrap();
        assert_eq!(one.best, r.tree.node(0).trajectory);
        assert!(r.best_q >= one.best_q);
        assert_eq!(run_search(&c, &p, &cfg, seed).unwrap(), r);
    }
}

#[test]
fn disconnected_map_is_rejected() {
    let map = GridMap::new(3, 3, [Cell::new(0, 1), Cell::new(1, 0), Cell::new(1, 1)], Cell::new(2, 2)).unwrap();
    let cov = CoverageMap::new(&map);
    let instr = Instruction::new("complete coverage", 0).unwrap();
    let r = run_search(&ctx(&map, &cov, &instr), &HeuristicProposer::default(), &MctsConfig::default(), 0);
    assert!(matches!(r, Err(SearchError::Disconnected(1))));
}

#[test]
fn config_validation() {
    assert!(MctsConfig::default().validate().is_ok());
    for bad in [
        MctsConfig { epsilon: 0.0, ..MctsConfig::default() },
        MctsConfig { alpha: 0.0, ..MctsConfig::default() },
        MctsConfig { alpha: 1.5, ..MctsConfig::default() },
        MctsConfig { omega: -1.0, ..MctsConfig::default() },
        MctsConfig { max_depth: 0, ..MctsConfig::default() },
        MctsConfig { weights: RewardWeights { c1: 1.0, c2: 0.0, c3: 1.0 }, ..MctsConfig::default() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn uct_bonus_is_nonnegative_and_shrinks_with_visits(
        q in -2.0f64..2.0, n in 0u32..1000, np in 0u32..1000, omega in 0.0f64..5.0, eps in 1e-9f64..2.0,
    ) {
        let u = uct_score(q, n, np, omega, eps);
        prop_assert!(u >= q);
        prop_assert!(uct_score(q, n + 1, np, omega, eps) <= u);
        prop_assert!(uct_score(q, n, np + 1, omega, eps) >= u);
    }

    #[test]
    fn reward_is_bounded(
        free in 1usize..500, v in 0usize..500, r in 0usize..500, e in 0.0f64..=1.0,
        c1 in 0.01f64..3.0, c2 in 0.01f64..3.0, c3 in 0.01f64..3.0,
    ) {
        let visited = v % (free + 1);
        let revisited = if visited == 0 { 0 } else { r % (visited + 1) };
        let w = RewardWeights { c1, c2, c3 };
        let q = reward(CoverageSets { free, visited, revisited }, &w, e);
        prop_assert!(q >= -c2 - 1e-12 && q <= c1 + c3 + 1e-12);
        if visited == 0 {
            prop_assert!(close(q, c3 * e));
        }
    }

    #[test]
    fn backprop_is_a_convex_blend(
        q in -1.0f64..3.0, kids in prop::collection::vec(-1.0f64..3.0, 1..6), alpha in 0.001f64..=1.0,
    ) {
        let mut tree = SearchTree::default();
        tree.push(leaf(None, q, 1));
        let mut last = 0;
        for k in &kids {
            last = tree.push(leaf(Some(0), *k, 0));
        }
        tree.backpropagate(last, alpha);
        let m = kids.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let got = tree.node(0).q_value;
        prop_assert!(got >= q.min(m) - 1e-12 && got <= q.max(m) + 1e-12);
        prop_assert!(close(got, (1.0 - alpha) * q + alpha * m));
    }
}
