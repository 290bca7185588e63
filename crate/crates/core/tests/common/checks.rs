//! Policy-level checks shared by the unit suites and the acceptance gate.

use rand::Rng;

use super::*;
use navlab::env::{generate_episodes, Vocabulary};
use navlab::nn::Session;
use navlab::policy::{action_probabilities, run_policy, sample_action, Decision};
use navlab::rng;
use navlab::tensor::Tensor;

/// Largest |gasa − plain| over `cases` random inputs with both affinity
/// scalars set to zero.
pub fn gasa_zero_scalar_gap(cases: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..cases {
        let mut r = rng::substream(31, "gasa-zero", k);
        let mut policy = tiny_policy();
        policy.heads = if r.gen_bool(0.5) { 1 } else { 2 };
        policy.gasa_layers = 1;
        let base = tiny_model(k, 8).spec;
        let mut model = navlab::model::NavModel::new(navlab::model::ModelSpec { policy, ..base });
        let layers: Vec<_> = model
            .policy
            .gasa_layers()
            .iter()
            .chain(model.policy.cross_layers().iter().map(|c| &c.gasa))
            .copied()
            .collect();
        for g in &layers {
            *model.store.get_mut(g.w) = Tensor::scalar(0.0);
            *model.store.get_mut(g.b) = Tensor::scalar(0.0);
        }
        let n = r.gen_range(1..=9);
        let d = model.spec.policy.d_model;
        let x = Tensor::matrix(n, d, (0..n * d).map(|_| r.gen_range(-2.0..2.0)).collect()).unwrap();
        let pts: Vec<[f64; 2]> = (0..n).map(|_| [r.gen_range(0.0..10.0), r.gen_range(0.0..10.0)]).collect();
        let dist: Vec<f64> = (0..n * n)
            .map(|i| navlab::env::euclidean(pts[i / n], pts[i % n]))
            .collect();
        let s = Session::new(&model.store, false);
        let t = s.tape();
        let xv = t.constant(x);
        let dv = t.constant(Tensor::matrix(n, n, dist).unwrap());
        for g in &layers {
            let a = g.forward(&s, xv, dv).unwrap();
            let b = g.layer.forward(&s, xv, None, None).unwrap();
            for (p, q) in t.value(a).data().iter().zip(t.value(b).data()) {
                worst = worst.max((p - q).abs());
            }
        }
    }
    worst
}

#[derive(Debug, Default)]
pub struct MaskReport {
    pub rollouts: usize,
    pub decisions: usize,
    /// Chosen actions that named a visited node.
    pub visited_choices: usize,
    /// Visited nodes that received non-zero sampling probability.
    pub leaked_mass: usize,
    /// Consecutive trajectory nodes with no environment edge.
    pub bad_edges: usize,
    pub errors: usize,
}

impl MaskReport {
    pub fn sound(&self) -> bool {
        self.visited_choices == 0 && self.leaked_mass == 0 && self.bad_edges == 0 && self.errors == 0
    }
}

/// Random models sampling actions (odd indices act greedily) in random
/// worlds.
pub fn mask_soundness(rollouts: u64) -> MaskReport {
    let mut rep = MaskReport::default();
    let vocab = Vocabulary::new(8);
    for k in 0..rollouts {
        let mut r = rng::substream(41, "mask", k);
        let model = tiny_model(k, 8);
        let n = r.gen_range(4..=14);
        let env = random_world(&mut r, n);
        let Ok(eps) = generate_episodes(&env, &mut r, 1, 1, 4, &vocab) else {
            continue;
        };
        let greedy = k % 2 == 1;
        let s = Session::new(&model.store, false);
        let mut sampler = rng::substream(41, "mask-sample", k);
        let mut decisions = 0;
        let mut visited_choices = 0;
        let mut leaked = 0;
        let out = run_policy(&s, &model, model.latent_source(None), &env, &eps[0], 15, |c| {
            decisions += 1;
            let p = action_probabilities(c.scores, c.mask, 1.0)?;
            for (i, a) in c.actions.iter().enumerate() {
                if let navlab::policy::Action::Node(id) = a {
                    if c.memory.is_visited(*id) && p[i] != 0.0 {
                        leaked += 1;
                    }
                }
            }
            let take = if greedy {
                navlab::policy::greedy_action(c.scores, c.mask, c.actions)?
            } else {
                sample_action(c.scores, c.mask, c.actions, 1.0, &mut sampler)?
            };
            if let navlab::policy::Action::Node(id) = take {
                if c.memory.is_visited(id) {
                    visited_choices += 1;
                }
            }
            Ok(Decision { take, label: None })
        });
        rep.rollouts += 1;
        rep.decisions += decisions;
        rep.visited_choices += visited_choices;
        rep.leaked_mass += leaked;
        match out {
            Ok(roll) => {
                rep.bad_edges += roll.trajectory.windows(2).filter(|w| env.edge_length(w[0], w[1]).is_none()).count();
            }
            Err(_) => rep.errors += 1,
        }
    }
    rep
}
