//! Exhaustive oracles for the fast graph, labelling and warping paths.

use rand::Rng;

use super::*;
use navlab::config::PseudoLabelRule;
use navlab::env::{tie_tolerance, EnvGraph};
use navlab::eval::dtw;
use navlab::policy::{Action, GraphMemory, NodeStatus};
use navlab::rng;
use navlab::train::pseudo_label;

/// Minimum length, then the lexicographically smallest sequence among the
/// (tolerance-)tied minimisers.
pub fn brute_shortest(env: &EnvGraph, a: usize, b: usize) -> (Vec<usize>, f64) {
    let adj = |u: usize| neighbours(env, u);
    let paths = all_simple_paths(&adj, a, b);
    let best = paths.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let tol = tie_tolerance(best);
    paths
        .into_iter()
        .filter(|p| p.1 <= best + tol)
        .min_by(|x, y| x.0.cmp(&y.0))
        .unwrap()
}

pub fn shortest_path_mismatches(cases: u64) -> usize {
    let mut mismatches = 0;
    for k in 0..cases {
        let mut r = rng::substream(11, "oracle-shortest", k);
        let env = any_world(&mut r, 12);
        let n = env.node_count();
        for _ in 0..4 {
            let (a, b) = (r.gen_range(0..n), r.gen_range(0..n));
            let (p, l) = env.shortest_path(a, b).unwrap();
            let (bp, bl) = brute_shortest(&env, a, b);
            if p != bp || (l - bl).abs() > 1e-9 {
                mismatches += 1;
            }
        }
    }
    mismatches
}

/// Stop inside the threshold, else the unexplored node minimising memory
/// distance plus remaining geodesic, smallest id among ties; all distances
/// by enumeration.
fn brute_label(env: &EnvGraph, mem: &GraphMemory<()>, goal: usize, rule: PseudoLabelRule) -> Action {
    let cur = mem.current().unwrap();
    let env_adj = |u: usize| neighbours(env, u);
    if brute_distance(&env_adj, cur, goal) < 3.0 {
        return Action::Stop;
    }
    let mem_adj = memory_adjacency(mem, env);
    let mut costs = Vec::new();
    for n in mem.nodes() {
        if n.status != NodeStatus::Unexplored {
            continue;
        }
        let remaining = brute_distance(&env_adj, n.id, goal);
        let cost = match rule {
            PseudoLabelRule::PathPlusRemaining => brute_distance(&mem_adj, cur, n.id) + remaining,
            PseudoLabelRule::RemainingOnly => remaining,
        };
        costs.push((n.id, cost));
    }
    let Some(best) = costs.iter().map(|c| c.1).reduce(f64::min) else {
        return Action::Stop;
    };
    let tol = tie_tolerance(best);
    Action::Node(costs.iter().filter(|c| c.1 <= best + tol).map(|c| c.0).min().unwrap())
}

pub fn pseudo_label_mismatches(cases: u64) -> usize {
    let mut mismatches = 0;
    for k in 0..cases {
        let mut r = rng::substream(12, "oracle-label", k);
        let env = any_world(&mut r, 12);
        let n = env.node_count();
        let start = r.gen_range(0..n);
        let decisions = r.gen_range(0..6);
        let mem = explore(&env, start, decisions, &mut r);
        let goal = r.gen_range(0..n);
        for rule in [PseudoLabelRule::PathPlusRemaining, PseudoLabelRule::RemainingOnly] {
            let fast = pseudo_label(&mem, &env, goal, 3.0, rule).unwrap();
            if fast != brute_label(&env, &mem, goal, rule) {
                mismatches += 1;
            }
        }
    }
    mismatches
}

/// Every monotone warping from (0,0) to (n−1,m−1), minimum total cost.
fn brute_dtw(env: &EnvGraph, a: &[usize], b: &[usize]) -> f64 {
    fn go(env: &EnvGraph, a: &[usize], b: &[usize], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + env.geodesic_distance(a[i], b[j]).unwrap();
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() {
            go(env, a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            go(env, a, b, i, j + 1, acc, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            go(env, a, b, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    go(env, a, b, 0, 0, 0.0, &mut best);
    best
}

/// All walks with 1..=max_len nodes.
fn all_walks(env: &EnvGraph, max_len: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = (0..env.node_count()).map(|v| vec![v]).collect();
    let mut frontier = out.clone();
    for _ in 1..max_len {
        let mut next = Vec::new();
        for w in &frontier {
            for &(v, _) in env.neighbors(*w.last().unwrap()) {
                let mut x = w.clone();
                x.push(v);
                next.push(x);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Returns (pairs checked, mismatches) over every pair of walks of up to
/// five nodes in a small fixed world.
pub fn dtw_mismatches() -> (usize, usize) {
    let env = EnvGraph::new(
        "dtw",
        vec![[0.0, 0.0], [0.0, 2.0], [0.0, 4.5], [3.0, 0.0]],
        vec![0, 1, 2, 3],
        &[(0, 1), (1, 2), (0, 3)],
    )
    .unwrap();
    let walks = all_walks(&env, 5);
    let mut checked = 0;
    let mut mismatches = 0;
    for a in &walks {
        for b in &walks {
            checked += 1;
            let fast = dtw(&env, a, b).unwrap();
            if (fast - brute_dtw(&env, a, b)).abs() > 1e-9 {
                mismatches += 1;
            }
        }
    }
    (checked, mismatches)
}

