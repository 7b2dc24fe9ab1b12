//! Local search over the order in which a covering walk first reaches its
//! targets, using shortest-path distances between free cells.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{Cell, CoverageMap, GridMap, Trajectory};

const MAX_PASSES: usize = 60;
/// Extra cost of stepping onto a cell visited exactly once.
const REVISIT_PENALTY: u32 = 8;

struct Metric {
    dist: Vec<Vec<i64>>,
}

impl Metric {
    fn d(&self, a: usize, b: usize) -> i64 {
        self.dist[a][b]
    }
}

/// Reorders the first visits of `tour` to shorten the walk. Targets are
/// visited phase by phase; up to `skippable` targets of the last phase are
/// left out when that shortens the walk. Legs between targets avoid turning
/// once-visited cells into revisited ones. The result starts where `tour`
/// starts and covers every cell it covered except the skipped ones.
pub fn refine_tour(
    map: &GridMap,
    coverage: &CoverageMap,
    tour: &Trajectory,
    phases: &[Vec<Cell>],
    skippable: usize,
    anneal_steps: usize,
    seed: u64,
) -> Trajectory {
    let Some(head) = tour.first() else {
        return tour.clone();
    };
    let mut phase_of = vec![usize::MAX; map.cell_count()];
    for (k, phase) in phases.iter().enumerate() {
        for &c in phase {
            if let Some(i) = map.index(c) {
                if phase_of[i] == usize::MAX {
                    phase_of[i] = k;
                }
            }
        }
    }
    let mut nodes = vec![head];
    let mut seen = vec![false; map.cell_count()];
    seen[map.index(head).expect("tour starts on the map")] = true;
    let mut order: Vec<Vec<usize>> = vec![Vec::new(); phases.len()];
    for &c in tour.iter() {
        let Some(i) = map.index(c) else { continue };
        if seen[i] || phase_of[i] == usize::MAX {
            continue;
        }
        seen[i] = true;
        order[phase_of[i]].push(nodes.len());
        nodes.push(c);
    }
    let dist = nodes
        .iter()
        .map(|&a| {
            let row = map.distances_from(a);
            nodes.iter().map(|&b| row[map.index(b).unwrap()].map_or(i64::MAX / 4, |d| d as i64)).collect()
        })
        .collect();
    let metric = Metric { dist };
    let mut from = 0;
    let last = order.len().saturating_sub(1);
    for (k, seq) in order.iter_mut().enumerate() {
        let keep = if k == last { seq.len().saturating_sub(skippable) } else { seq.len() };
        anneal(&metric, from, seq, keep, anneal_steps, seed ^ k as u64);
        improve(&metric, from, seq, keep);
        seq.truncate(keep);
        if let Some(&end) = seq.last() {
            from = end;
        }
    }
    let mut counts: Vec<u32> = (0..map.cell_count()).map(|i| coverage.count(cell_at(map, i))).collect();
    let hi = map.index(head).unwrap();
    counts[hi] = counts[hi].max(1);
    let mut walk = vec![head];
    let mut go = |walk: &mut Vec<Cell>, target: Cell| {
        let i = map.index(target).unwrap();
        if counts[i] > 0 || !map.is_free(target) {
            return;
        }
        for c in leg(map, &counts, *walk.last().unwrap(), target) {
            counts[map.index(c).unwrap()] += 1;
            walk.push(c);
        }
    };
    for &n in order.iter().flatten() {
        go(&mut walk, nodes[n]);
    }
    Trajectory::new(walk)
}

fn cell_at(map: &GridMap, i: usize) -> Cell {
    Cell::new((i / map.width()) as i32, (i % map.width()) as i32)
}

/// Cheapest walk from `from` to `to`, excluding `from`, where every step costs
/// one and stepping onto a once-visited cell costs extra.
fn leg(map: &GridMap, counts: &[u32], from: Cell, to: Cell) -> Vec<Cell> {
    let n = map.cell_count();
    let mut cost = vec![u32::MAX; n];
    let mut back = vec![usize::MAX; n];
    let (src, dst) = (map.index(from).unwrap(), map.index(to).unwrap());
    cost[src] = 0;
    let mut heap = BinaryHeap::from([Reverse((0u32, src))]);
    while let Some(Reverse((c, i))) = heap.pop() {
        if i == dst {
            break;
        }
        if c > cost[i] {
            continue;
        }
        for nb in map.free_neighbors(cell_at(map, i)) {
            let j = map.index(nb).unwrap();
            let step = if counts[j] == 1 && j != dst { 1 + REVISIT_PENALTY } else { 1 };
            if c + step < cost[j] {
                cost[j] = c + step;
                back[j] = i;
                heap.push(Reverse((c + step, j)));
            }
        }
    }
    let mut out = Vec::new();
    let mut i = dst;
    while i != src {
        out.push(cell_at(map, i));
        i = back[i];
    }
    out.reverse();
    out
}

fn path_cost(m: &Metric, head: usize, seq: &[usize]) -> i64 {
    let mut prev = head;
    let mut total = 0;
    for &x in seq {
        total += m.d(prev, x);
        prev = x;
    }
    total
}

/// Simulated annealing over reversals, single relocations and exchanges with
/// the skipped tail. Moves are drawn towards metric neighbours. Leaves the
/// best ordering seen in `seq`.
fn anneal(m: &Metric, head: usize, seq: &mut Vec<usize>, keep: usize, steps: usize, seed: u64) {
    if keep < 3 || steps == 0 {
        return;
    }
    const T0: f64 = 1.0;
    const T1: f64 = 0.1;
    const NEAR: usize = 8;
    let n = m.dist.len();
    let near: Vec<Vec<usize>> = (0..n)
        .map(|a| {
            let mut others: Vec<usize> = (1..n).filter(|&b| b != a).collect();
            others.sort_by_key(|&b| (m.d(a, b), b));
            others.truncate(NEAR);
            others
        })
        .collect();
    let mut pos = vec![usize::MAX; n];
    let reindex = |seq: &[usize], pos: &mut Vec<usize>| {
        for (k, &x) in seq.iter().enumerate() {
            pos[x] = k;
        }
    };
    reindex(seq, &mut pos);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cost = path_cost(m, head, &seq[..keep]);
    let mut best = (cost, seq.clone());
    let pool = seq.len() - keep;
    let cooling = (T1 / T0).powf(1.0 / steps as f64);
    let mut temp = T0;
    for _ in 0..steps {
        temp *= cooling;
        let accept = |delta: i64, rng: &mut ChaCha8Rng| delta <= 0 || rng.random::<f64>() < (-(delta as f64) / temp).exp();
        let kind = rng.random_range(0..if pool > 0 { 3 } else { 2 });
        if kind == 0 {
            // reverse seq[i..=j] so that prev(i) becomes adjacent to seq[j]
            let i = rng.random_range(0..keep - 1);
            let a = prev(head, seq, i);
            let c = near[a][rng.random_range(0..near[a].len())];
            let j = pos[c];
            if j <= i || j >= keep {
                continue;
            }
            let b = seq[i];
            let mut delta = m.d(a, c) - m.d(a, b);
            if j + 1 < keep {
                delta += m.d(b, seq[j + 1]) - m.d(c, seq[j + 1]);
            }
            if accept(delta, &mut rng) {
                seq[i..=j].reverse();
                for k in i..=j {
                    pos[seq[k]] = k;
                }
                cost += delta;
            }
        } else {
            // move p (from the prefix, or from the tail in exchange for seq[i])
            // next to one of its neighbours
            let (i, q) = if kind == 1 {
                let i = rng.random_range(0..keep);
                (i, i)
            } else {
                (rng.random_range(0..keep), keep + rng.random_range(0..pool))
            };
            let p = seq[q];
            let anchor = near[p][rng.random_range(0..near[p].len())];
            let ap = pos[anchor];
            if ap >= keep || ap == i {
                continue;
            }
            let r = if ap > i { ap - 1 } else { ap };
            let g = if rng.random_bool(0.5) { r } else { r + 1 };
            let gain = removal_gain(m, head, seq, keep, i, 1);
            let at = |k: usize| if k < i { seq[k] } else { seq[k + 1] };
            let x = if g == 0 { head } else { at(g - 1) };
            let y = if g < keep - 1 { Some(at(g)) } else { None };
            let add = m.d(x, p) + y.map_or(0, |y| m.d(p, y) - m.d(x, y));
            let delta = add - gain;
            if accept(delta, &mut rng) {
                let out = seq.remove(i);
                seq.insert(g, p);
                if kind == 2 {
                    seq[q] = out;
                }
                reindex(seq, &mut pos);
                cost += delta;
            }
        }
        if cost < best.0 {
            best = (cost, seq.clone());
        }
    }
    *seq = best.1;
}

/// Shortens the open path `head, seq[0], .., seq[keep-1]` with 2-opt,
/// segment relocation and exchanges against the skipped tail.
fn improve(m: &Metric, head: usize, seq: &mut [usize], keep: usize) {
    for _ in 0..MAX_PASSES {
        let mut improved = false;
        improved |= two_opt(m, head, seq, keep);
        improved |= relocate(m, head, seq, keep);
        improved |= exchange(m, head, seq, keep);
        if !improved {
            break;
        }
    }
}

fn prev(head: usize, seq: &[usize], i: usize) -> usize {
    if i == 0 {
        head
    } else {
        seq[i - 1]
    }
}

fn two_opt(m: &Metric, head: usize, seq: &mut [usize], keep: usize) -> bool {
    let mut improved = false;
    for i in 0..keep {
        for j in i + 1..keep {
            let (a, b, c) = (prev(head, seq, i), seq[i], seq[j]);
            let mut delta = m.d(a, c) - m.d(a, b);
            if j + 1 < keep {
                let e = seq[j + 1];
                delta += m.d(b, e) - m.d(c, e);
            }
            if delta < 0 {
                seq[i..=j].reverse();
                improved = true;
            }
        }
    }
    improved
}

/// Cost of cutting `seq[i..i+len]` out of the prefix.
fn removal_gain(m: &Metric, head: usize, seq: &[usize], keep: usize, i: usize, len: usize) -> i64 {
    let (a, s, t) = (prev(head, seq, i), seq[i], seq[i + len - 1]);
    let mut gain = m.d(a, s);
    if i + len < keep {
        let e = seq[i + len];
        gain += m.d(t, e) - m.d(a, e);
    }
    gain
}

/// Cheapest place to put the chain `s..t` (either direction) into `rest`.
fn best_insertion(m: &Metric, head: usize, rest: &[usize], s: usize, t: usize) -> (i64, usize, bool) {
    let mut best = (i64::MAX, 0, false);
    for g in 0..=rest.len() {
        let x = prev(head, rest, g);
        let y = rest.get(g).copied();
        let base = y.map_or(0, |y| m.d(x, y));
        let fwd = m.d(x, s) + y.map_or(0, |y| m.d(t, y)) - base;
        let rev = m.d(x, t) + y.map_or(0, |y| m.d(s, y)) - base;
        if fwd < best.0 {
            best = (fwd, g, false);
        }
        if rev < best.0 {
            best = (rev, g, true);
        }
    }
    best
}

fn relocate(m: &Metric, head: usize, seq: &mut [usize], keep: usize) -> bool {
    let mut improved = false;
    for len in 1..=3.min(keep) {
        let mut i = 0;
        while i + len <= keep {
            let gain = removal_gain(m, head, seq, keep, i, len);
            let mut rest: Vec<usize> = seq[..keep].to_vec();
            let segment: Vec<usize> = rest.drain(i..i + len).collect();
            let (cost, g, reversed) = best_insertion(m, head, &rest, segment[0], segment[len - 1]);
            if cost < gain {
                let mut segment = segment;
                if reversed {
                    segment.reverse();
                }
                rest.splice(g..g, segment);
                seq[..keep].copy_from_slice(&rest);
                improved = true;
            }
            i += 1;
        }
    }
    improved
}

fn exchange(m: &Metric, head: usize, seq: &mut [usize], keep: usize) -> bool {
    let mut improved = false;
    for q in keep..seq.len() {
        for i in 0..keep {
            let gain = removal_gain(m, head, seq, keep, i, 1);
            let mut rest: Vec<usize> = seq[..keep].to_vec();
            let out = rest.remove(i);
            let p = seq[q];
            let (cost, g, _) = best_insertion(m, head, &rest, p, p);
            if cost < gain {
                rest.insert(g, p);
                seq[..keep].copy_from_slice(&rest);
                seq[q] = out;
                improved = true;
                break;
            }
        }
    }
    improved
}
