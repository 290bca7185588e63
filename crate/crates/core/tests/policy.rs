mod common;

use common::checks::*;
use common::*;
use navlab::env::{EnvGraph, Episode, Vocabulary};
use navlab::nn::Session;
use navlab::policy::{greedy_rollout, Action, GraphMemory, NodeStatus};
use navlab::rng;
use navlab::tensor::Tensor;

#[test]
fn zeroed_affinity_reduces_to_plain_attention() {
    assert!(gasa_zero_scalar_gap(100) <= 1e-10);
}

#[test]
fn masked_nodes_are_never_chosen() {
    let rep = mask_soundness(1000);
    assert!(rep.rollouts >= 900, "{rep:?}");
    assert!(rep.sound(), "{rep:?}");
}

fn line() -> EnvGraph {
    EnvGraph::new(
        "line",
        vec![[0.0, 0.0], [0.0, 2.0], [0.0, 4.0], [0.0, 6.0]],
        vec![0, 1, 2, 3],
        &[(0, 1), (1, 2), (2, 3)],
    )
    .unwrap()
}

#[test]
fn stop_is_the_last_and_only_sentinel_row() {
    let env = line();
    let mut mem: GraphMemory<()> = GraphMemory::new();
    let obs = env.observe(1, 0.0).unwrap();
    mem.update(&env, 1, &obs, vec![(); obs.candidates.len()]).unwrap();
    assert_eq!(mem.actions(), vec![Action::Node(1), Action::Node(0), Action::Node(2), Action::Stop]);
    assert_eq!(mem.action_mask(), vec![false, true, true, true]);
    let p = mem.positions().unwrap();
    assert_eq!(p.last(), Some(&[0.0, 2.0]));
    for n in mem.nodes().iter().filter(|n| n.status == NodeStatus::Unexplored) {
        assert_eq!(n.visit_order, 0);
    }
}

#[test]
fn backtracking_routes_through_visited_nodes() {
    // 0 - 1 - 2 with 3 hanging off 0: after walking to 2, reaching 3 means
    // retracing 1 and 0.
    let env = EnvGraph::new(
        "fork",
        vec![[0.0, 0.0], [2.0, 0.0], [4.0, 0.0], [-2.0, 0.0]],
        vec![0, 1, 2, 3],
        &[(0, 1), (1, 2), (0, 3)],
    )
    .unwrap();
    let mut mem: GraphMemory<()> = GraphMemory::new();
    let obs = env.observe(0, 0.0).unwrap();
    mem.update(&env, 0, &obs, vec![(); obs.candidates.len()]).unwrap();
    step_to(&env, &mut mem, 1);
    step_to(&env, &mut mem, 2);
    assert_eq!(mem.route(3).unwrap(), vec![1, 0, 3]);
    let d = mem.distances_from_current().unwrap();
    assert!((d[3] - 6.0).abs() < 1e-12);
}

#[test]
fn revisits_keep_first_visit_order_and_views() {
    let env = line();
    let mut mem: GraphMemory<usize> = GraphMemory::new();
    let obs = env.observe(0, 0.0).unwrap();
    mem.update(&env, 0, &obs, vec![10]).unwrap();
    let obs = env.observe(1, 0.0).unwrap();
    mem.update(&env, 1, &obs, vec![20, 21]).unwrap();
    mem.revisit(&env, 0, 180.0).unwrap();
    let n0 = mem.node(0).unwrap();
    assert_eq!(n0.visit_order, 1);
    assert_eq!(n0.views, vec![10]);
    assert_eq!(mem.node(1).unwrap().visit_order, 2);
    assert_eq!(mem.current(), Some(0));
    assert_eq!(mem.heading(), 180.0);
}

#[test]
fn unexplored_node_pools_partial_views_from_each_visited_neighbour() {
    // Node 1 is seen from both 0 and 2.
    let env = EnvGraph::new(
        "v",
        vec![[0.0, 0.0], [2.0, 2.0], [4.0, 0.0]],
        vec![0, 1, 2],
        &[(0, 1), (1, 2), (0, 2)],
    )
    .unwrap();
    let mut mem: GraphMemory<&str> = GraphMemory::new();
    let obs = env.observe(0, 0.0).unwrap();
    let views = obs.candidates.iter().map(|c| if c.node == 1 { "from0" } else { "x" }).collect();
    mem.update(&env, 0, &obs, views).unwrap();
    let obs = env.observe(2, 90.0).unwrap();
    let views = obs.candidates.iter().map(|c| if c.node == 1 { "from2" } else { "y" }).collect();
    mem.update(&env, 2, &obs, views).unwrap();
    assert_eq!(mem.node(1).unwrap().views, vec!["from0", "from2"]);
}

#[test]
fn node_inputs_without_position_terms_are_the_pooled_latents() {
    let mut policy = tiny_policy();
    policy.zero_position_embeddings = true;
    let model = navlab::model::NavModel::new(navlab::model::ModelSpec {
        policy,
        ..tiny_model(3, 8).spec
    });
    let env = line();
    let s = Session::new(&model.store, false);
    let t = s.tape();
    let d = model.spec.latent.d_lm;
    let row = |v: f64| t.constant(Tensor::full(&[1, d], v));
    let mut mem = GraphMemory::new();
    let obs = env.observe(1, 0.0).unwrap();
    mem.update(&env, 1, &obs, vec![row(1.0), row(3.0)]).unwrap();
    let x = model.policy.node_inputs(&s, &mem).unwrap();
    let x = t.value(x).clone();
    assert_eq!(x.rows(), 4);
    // Visited node 1 pools its own two views; each unexplored neighbour has one.
    assert!(x.row(0).iter().all(|&v| (v - 2.0).abs() < 1e-15));
    let stop = model.store.entries().iter().find(|e| e.name.ends_with("stop")).unwrap();
    assert_eq!(x.row(3), stop.value.data());
}

#[test]
fn greedy_rollouts_are_reproducible() {
    let vocab = Vocabulary::new(8);
    for k in 0..20 {
        let mut r = rng::substream(5, "repro", k);
        let env = random_world(&mut r, 12);
        let Ok(eps) = navlab::env::generate_episodes(&env, &mut r, 1, 1, 3, &vocab) else {
            continue;
        };
        let model = tiny_model(k, 8);
        let a = greedy_rollout(&model, None, &env, &eps[0], 15).unwrap();
        let b = greedy_rollout(&model, None, &env, &eps[0], 15).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.steps, b.steps);
    }
}

#[test]
fn episode_with_foreign_tokens_is_rejected() {
    let env = line();
    let vocab = Vocabulary::new(4);
    let ep = Episode {
        id: "e".into(),
        env_id: "line".into(),
        start: 0,
        goal: 2,
        path: vec![0, 1, 2],
        instruction: vec![0, 99, 0, 6],
        instruction_text: None,
    };
    assert!(ep.validate(&env, &vocab).is_err());
}
