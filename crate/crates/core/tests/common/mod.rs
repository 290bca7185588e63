#![allow(dead_code)]

pub mod checks;
pub mod oracle;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use navlab::config::{LatentConfig, PolicyConfig};
use navlab::env::{generate_env, EnvGenParams, EnvGraph, START_HEADING};
use navlab::model::{ModelSpec, NavModel};
use navlab::policy::{Action, GraphMemory, NodeStatus};

/// Sparse random geometric world with `n` nodes.
pub fn random_world(r: &mut ChaCha8Rng, n: usize) -> EnvGraph {
    let params = EnvGenParams {
        node_count: n,
        radius: r.gen_range(1.0..2.2),
        landmark_vocab: 8,
        side: None,
    };
    generate_env(format!("w{n}"), r, &params).unwrap()
}

/// Grid world with unit spacing and a random subset of lattice edges kept
/// (plus a spanning comb so it stays connected); full of equal-length paths.
pub fn lattice_world(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> EnvGraph {
    let id = |i: usize, j: usize| i * cols + j;
    let mut positions = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            positions.push([j as f64, i as f64]);
        }
    }
    let mut edges = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            if j + 1 < cols && (i == 0 || r.gen_bool(0.7)) {
                edges.push((id(i, j), id(i, j + 1)));
            }
            if i + 1 < rows {
                edges.push((id(i, j), id(i + 1, j)));
            }
        }
    }
    let landmarks = (0..rows * cols).map(|_| r.gen_range(0..8)).collect();
    EnvGraph::new("lattice", positions, landmarks, &edges).unwrap()
}

/// Either kind of world, at most `max_nodes` nodes.
pub fn any_world(r: &mut ChaCha8Rng, max_nodes: usize) -> EnvGraph {
    if r.gen_bool(0.5) {
        let rows = r.gen_range(1..=3);
        let cols = r.gen_range(2..=max_nodes / rows);
        lattice_world(r, rows, cols)
    } else {
        let n = r.gen_range(2..=max_nodes);
        random_world(r, n)
    }
}

pub fn neighbours(env: &EnvGraph, u: usize) -> Vec<(usize, f64)> {
    env.neighbors(u).to_vec()
}

/// Every simple path from `from` to `to` over the edge list, with lengths.
pub fn all_simple_paths(adj: &dyn Fn(usize) -> Vec<(usize, f64)>, from: usize, to: usize) -> Vec<(Vec<usize>, f64)> {
    fn go(
        adj: &dyn Fn(usize) -> Vec<(usize, f64)>,
        to: usize,
        path: &mut Vec<usize>,
        len: f64,
        out: &mut Vec<(Vec<usize>, f64)>,
    ) {
        let u = *path.last().unwrap();
        if u == to {
            out.push((path.clone(), len));
            return;
        }
        for (w, l) in adj(u) {
            if !path.contains(&w) {
                path.push(w);
                go(adj, to, path, len + l, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(adj, to, &mut vec![from], 0.0, &mut out);
    out
}

pub fn brute_distance(adj: &dyn Fn(usize) -> Vec<(usize, f64)>, from: usize, to: usize) -> f64 {
    all_simple_paths(adj, from, to)
        .into_iter()
        .map(|p| p.1)
        .fold(f64::INFINITY, f64::min)
}

/// Explores by repeatedly routing to a random unexplored node, as a rollout
/// would, for `decisions` decisions.
pub fn explore(env: &EnvGraph, start: usize, decisions: usize, r: &mut ChaCha8Rng) -> GraphMemory<()> {
    let mut mem = GraphMemory::new();
    let obs = env.observe(start, START_HEADING).unwrap();
    mem.update(env, start, &obs, vec![(); obs.candidates.len()]).unwrap();
    for _ in 0..decisions {
        let frontier: Vec<usize> = mem
            .nodes()
            .iter()
            .filter(|n| n.status == NodeStatus::Unexplored)
            .map(|n| n.id)
            .collect();
        if frontier.is_empty() {
            break;
        }
        let target = frontier[r.gen_range(0..frontier.len())];
        step_to(env, &mut mem, target);
    }
    mem
}

/// Routes to `target` through memory, observing every newly reached node.
pub fn step_to(env: &EnvGraph, mem: &mut GraphMemory<()>, target: usize) {
    let mut at = mem.current().unwrap();
    for hop in mem.route(target).unwrap() {
        let heading = env.bearing(at, hop);
        if mem.is_visited(hop) {
            mem.revisit(env, hop, heading).unwrap();
        } else {
            let obs = env.observe(hop, heading).unwrap();
            mem.update(env, hop, &obs, vec![(); obs.candidates.len()]).unwrap();
        }
        at = hop;
    }
}

pub fn memory_adjacency(mem: &GraphMemory<()>, env: &EnvGraph) -> impl Fn(usize) -> Vec<(usize, f64)> {
    let edges: Vec<(usize, usize)> = mem.edges().collect();
    let lengths: Vec<f64> = edges.iter().map(|&(u, v)| env.edge_length(u, v).unwrap()).collect();
    move |u| {
        edges
            .iter()
            .zip(&lengths)
            .filter_map(|(&(a, b), &l)| {
                if a == u {
                    Some((b, l))
                } else if b == u {
                    Some((a, l))
                } else {
                    None
                }
            })
            .collect()
    }
}

pub fn tiny_latent() -> LatentConfig {
    LatentConfig {
        d_v: 8,
        d_q: 8,
        d_lm: 12,
        num_queries: 2,
        encoder_depth: 1,
        ..LatentConfig::default()
    }
}

pub fn tiny_policy() -> PolicyConfig {
    PolicyConfig {
        d_model: 8,
        direction_hidden: 6,
        node_encoder_depth: 1,
        cross_modal_depth: 1,
        ..PolicyConfig::default()
    }
}

pub fn tiny_model(seed: u64, landmarks: usize) -> NavModel {
    NavModel::new(ModelSpec {
        seed,
        landmark_vocab: landmarks,
        latent: tiny_latent(),
        policy: tiny_policy(),
    })
}

pub fn is_masked_choice(mem_mask: &[bool], actions: &[Action], chosen: Action) -> bool {
    actions
        .iter()
        .zip(mem_mask)
        .any(|(&a, &keep)| a == chosen && !keep)
}

/// Tiny model, short schedule.
pub fn tiny_config(seed: u64) -> navlab::config::RunConfig {
    let mut cfg = navlab::config::RunConfig {
        seed,
        landmark_vocab: 8,
        latent: tiny_latent(),
        policy: tiny_policy(),
        ..Default::default()
    };
    cfg.train.lr_peak = 1e-3;
    cfg.train.lr_floor = 1e-5;
    cfg.train.warmup_steps = 5;
    cfg.train.total_steps = 20;
    cfg.train.eval_every = 0;
    cfg
}

/// Small seeded benchmark matching [`tiny_config`]'s vocabulary.
pub fn tiny_benchmark(seed: u64) -> navlab::benchmark::Benchmark {
    navlab::benchmark::generate(&navlab::benchmark::BenchmarkSpec {
        seed,
        train_worlds: 2,
        train_episodes: 12,
        heldout_worlds: 1,
        heldout_episodes: 6,
        world: EnvGenParams {
            node_count: 10,
            radius: 2.6,
            landmark_vocab: 8,
            side: None,
        },
        min_hops: 1,
        max_hops: 3,
    })
    .unwrap()
}
