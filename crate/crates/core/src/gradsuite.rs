//! Finite-difference sweep over every differentiable primitive, the layer
//! blocks built on them, and a full rollout loss in a three-node world.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autograd::{Tape, Var};
use crate::config::{LatentConfig, PolicyConfig, PseudoLabelRule};
use crate::env::{synthesize_instruction, EnvGraph, Episode, Vocabulary};
use crate::error::Result;
use crate::gradcheck::{grad_check, grad_check_store, DEFAULT_STEP};
use crate::latent::ViewKey;
use crate::model::{ModelSpec, NavModel};
use crate::nn::{ParamBuilder, ParamStore, Session};
use crate::policy::{GraphMemory, LatentSource};
use crate::rng;
use crate::tensor::Tensor;
use crate::train::{bc_rollout, dagger_rollout, DaggerParams};

pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub cases: usize,
    pub max_rel_error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

fn rand_tensor(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| r.gen_range(-1.5..1.5)).collect();
    Tensor::matrix(rows, cols, data).expect("valid shape")
}

/// Contracts an arbitrary output with fixed random weights so every output
/// coordinate carries a distinct gradient.
fn contract(t: &Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = t.value(out).shape().to_vec();
    let mut r = rng::substream(seed, "gradcheck-weights", 0);
    let w = Tensor::new(shape.clone(), (0..shape.iter().product()).map(|_| r.gen_range(-1.0..1.0)).collect())?;
    let p = t.mul(out, t.constant(w))?;
    Ok(t.sum(p))
}

type PrimFn = fn(&Tape, &[Var], &mut ChaCha8Rng) -> Result<Var>;

struct Primitive {
    name: &'static str,
    /// Input shapes given random small dimensions `(a, b, c)`.
    inputs: fn(usize, usize, usize) -> Vec<(usize, usize)>,
    build: PrimFn,
}

fn random_mask(r: &mut ChaCha8Rng, len: usize) -> Vec<bool> {
    let mut m: Vec<bool> = (0..len).map(|_| r.gen_bool(0.7)).collect();
    let keep = r.gen_range(0..len);
    m[keep] = true;
    m
}

fn primitives() -> Vec<Primitive> {
    vec![
        Primitive {
            name: "matmul",
            inputs: |a, b, c| vec![(a, b), (b, c)],
            build: |t, p, _| t.matmul(p[0], p[1]),
        },
        Primitive {
            name: "add",
            inputs: |a, b, _| vec![(a, b), (a, b)],
            build: |t, p, _| t.add(p[0], p[1]),
        },
        Primitive {
            name: "add_row",
            inputs: |a, b, _| vec![(a, b), (1, b)],
            build: |t, p, _| t.add_row(p[0], p[1]),
        },
        Primitive {
            name: "mul",
            inputs: |a, b, _| vec![(a, b), (a, b)],
            build: |t, p, _| t.mul(p[0], p[1]),
        },
        Primitive {
            name: "scale",
            inputs: |a, b, _| vec![(a, b)],
            build: |t, p, _| Ok(t.scale(p[0], -0.7)),
        },
        Primitive {
            name: "mul_scalar",
            inputs: |a, b, _| vec![(a, b), (1, 1)],
            build: |t, p, _| t.mul_scalar(p[0], p[1]),
        },
        Primitive {
            name: "add_scalar",
            inputs: |a, b, _| vec![(a, b), (1, 1)],
            build: |t, p, _| t.add_scalar(p[0], p[1]),
        },
        Primitive {
            name: "gelu",
            inputs: |a, b, _| vec![(a, b)],
            build: |t, p, _| Ok(t.gelu(p[0])),
        },
        Primitive {
            name: "softmax",
            inputs: |a, b, _| vec![(a, b)],
            build: |t, p, r| {
                let len = t.value(p[0]).len();
                let cols = t.value(p[0]).cols();
                let rows = len / cols;
                let mut mask = Vec::with_capacity(len);
                for _ in 0..rows {
                    mask.extend(random_mask(r, cols));
                }
                t.softmax(p[0], Some(&mask))
            },
        },
        Primitive {
            name: "nll",
            inputs: |a, _, _| vec![(a + 1, 1)],
            build: |t, p, r| {
                let len = t.value(p[0]).len();
                let mask = random_mask(r, len);
                let kept: Vec<usize> = (0..len).filter(|&i| mask[i]).collect();
                let target = kept[r.gen_range(0..kept.len())];
                t.nll(p[0], Some(&mask), target)
            },
        },
        Primitive {
            name: "layer_norm",
            inputs: |a, b, _| vec![(a, b + 1), (1, b + 1), (1, b + 1)],
            build: |t, p, _| t.layer_norm(p[0], p[1], p[2], 1e-5),
        },
        Primitive {
            name: "transpose",
            inputs: |a, b, _| vec![(a, b)],
            build: |t, p, _| Ok(t.transpose(p[0])),
        },
        Primitive {
            name: "mean_rows",
            inputs: |a, b, _| vec![(a, b)],
            build: |t, p, _| Ok(t.mean_rows(p[0])),
        },
        Primitive {
            name: "concat_rows",
            inputs: |a, b, c| vec![(a, b), (c, b)],
            build: |t, p, _| t.concat_rows(p),
        },
        Primitive {
            name: "concat_cols",
            inputs: |a, b, c| vec![(a, b), (a, c)],
            build: |t, p, _| t.concat_cols(p),
        },
        Primitive {
            name: "slice_rows",
            inputs: |a, b, _| vec![(a + 1, b)],
            build: |t, p, r| {
                let rows = t.value(p[0]).rows();
                let start = r.gen_range(0..rows);
                let len = r.gen_range(1..=rows - start);
                t.slice_rows(p[0], start, len)
            },
        },
        Primitive {
            name: "slice_cols",
            inputs: |a, b, _| vec![(a, b + 1)],
            build: |t, p, r| {
                let cols = t.value(p[0]).cols();
                let start = r.gen_range(0..cols);
                let len = r.gen_range(1..=cols - start);
                t.slice_cols(p[0], start, len)
            },
        },
        Primitive {
            name: "gather_rows",
            inputs: |a, b, _| vec![(a, b)],
            build: |t, p, r| {
                let rows = t.value(p[0]).rows();
                let idx: Vec<usize> = (0..r.gen_range(1..=4)).map(|_| r.gen_range(0..rows)).collect();
                t.gather_rows(p[0], &idx)
            },
        },
        Primitive {
            name: "sum",
            inputs: |a, b, _| vec![(a, b)],
            build: |t, p, _| Ok(t.sum(p[0])),
        },
    ]
}

fn check_primitive(p: &Primitive, seeds: usize, master: u64) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for k in 0..seeds as u64 {
        let mut r = rng::substream(master, p.name, k);
        let (a, b, c) = (r.gen_range(1..=4), r.gen_range(1..=4), r.gen_range(1..=4));
        let inputs: Vec<Tensor> = (p.inputs)(a, b, c)
            .into_iter()
            .map(|(m, n)| rand_tensor(&mut r, m, n))
            .collect();
        let build_seed = rng::derive_seed(master, p.name, k);
        let err = grad_check(
            |t, vars| {
                // Same structural draws (masks, indices) on every evaluation.
                let mut r = rng::substream(build_seed, "structure", 0);
                let out = (p.build)(t, vars, &mut r)?;
                contract(t, out, build_seed)
            },
            &inputs,
            DEFAULT_STEP,
        )?;
        worst = worst.max(err);
    }
    Ok(CheckResult {
        name: format!("tensor-core/{}", p.name),
        cases: seeds,
        max_rel_error: worst,
    })
}

fn store_check<B, F>(name: &str, cases: usize, master: u64, build: B) -> Result<CheckResult>
where
    B: Fn(&mut ParamStore, &mut ChaCha8Rng) -> F,
    F: Fn(&Session) -> Result<Var>,
{
    let mut worst: f64 = 0.0;
    for k in 0..cases as u64 {
        let mut r = rng::substream(master, name, k);
        let mut store = ParamStore::new();
        let f = build(&mut store, &mut r);
        worst = worst.max(grad_check_store(&mut store, f, DEFAULT_STEP)?);
    }
    Ok(CheckResult {
        name: name.to_string(),
        cases,
        max_rel_error: worst,
    })
}

fn tiny_latent() -> LatentConfig {
    LatentConfig {
        d_v: 4,
        d_q: 4,
        d_lm: 6,
        num_queries: 2,
        qformer_depth: 1,
        encoder_depth: 1,
        trainable: true,
        ..LatentConfig::default()
    }
}

fn tiny_policy() -> PolicyConfig {
    PolicyConfig {
        d_model: 4,
        node_encoder_depth: 1,
        cross_modal_depth: 1,
        gasa_layers: 1,
        step_table: 4,
        direction_hidden: 3,
        max_steps: 4,
        ..PolicyConfig::default()
    }
}

/// Three nodes on an L: 0 → 1 → 2, goal at the far end.
pub fn three_node_world() -> Result<(EnvGraph, Episode, Vocabulary)> {
    let vocab = Vocabulary::new(3);
    let env = EnvGraph::new(
        "tri",
        vec![[0.0, 0.0], [3.0, 0.0], [3.0, 3.0]],
        vec![0, 1, 2],
        &[(0, 1), (1, 2)],
    )?;
    let path = vec![0, 1, 2];
    let ep = Episode {
        id: "tri-0".into(),
        env_id: "tri".into(),
        instruction: synthesize_instruction(&env, &path, &vocab),
        instruction_text: None,
        start: 0,
        goal: 2,
        path,
    };
    Ok((env, ep, vocab))
}

fn end_to_end(master: u64) -> Result<CheckResult> {
    let (env, ep, vocab) = three_node_world()?;
    let model = NavModel::new(ModelSpec {
        seed: master,
        landmark_vocab: vocab.landmarks,
        latent: tiny_latent(),
        policy: tiny_policy(),
    });
    let params = DaggerParams {
        temperature: 1.0,
        max_steps: 4,
        threshold: 3.0,
        rule: PseudoLabelRule::PathPlusRemaining,
    };
    let mut store = model.store.clone();
    let err = grad_check_store(
        &mut store,
        |s| {
            let t = s.tape();
            let bc = bc_rollout(s, &model, LatentSource::Live, &env, &ep)?;
            let mut r = rng::substream(master, rng::DAGGER, 0);
            let dag = dagger_rollout(s, &model, LatentSource::Live, &env, &ep, params, &mut r)?;
            let bc = t.scale(bc.loss.expect("labelled"), 0.2);
            match dag.loss {
                Some(d) => t.add(bc, d),
                None => Ok(bc),
            }
        },
        DEFAULT_STEP,
    )?;
    Ok(CheckResult {
        name: "rollout loss (3-node world, provider + policy)".into(),
        cases: 1,
        max_rel_error: err,
    })
}

/// Runs the whole sweep: `seeds` random draws per primitive, a tenth of
/// that per composite block, one end-to-end rollout.
pub fn run(seeds: usize, master: u64) -> Result<Vec<CheckResult>> {
    let seeds = seeds.max(1);
    let blocks = seeds.div_ceil(10);
    let mut out = Vec::new();
    for p in primitives() {
        out.push(check_primitive(&p, seeds, master)?);
    }

    out.push(store_check("nn/attention", blocks, master, |store, r| {
        let (n, m, d) = (r.gen_range(1..=3), r.gen_range(1..=3), 4);
        let heads = if r.gen_bool(0.5) { 2 } else { 1 };
        let mut b = ParamBuilder::new(store, r, "attn", true);
        let attn = b.attention("a", d, 3, d, heads);
        let q = rand_tensor(r, n, d);
        let c = rand_tensor(r, m, 3);
        let bias = rand_tensor(r, n, m);
        let mask: Vec<bool> = {
            let mut v = Vec::new();
            for _ in 0..n {
                v.extend(random_mask(r, m));
            }
            v
        };
        let seed = r.gen();
        move |s: &Session| {
            let t = s.tape();
            let out = attn.forward(s, t.constant(q.clone()), t.constant(c.clone()), Some(t.constant(bias.clone())), Some(&mask))?;
            contract(t, out, seed)
        }
    })?);

    out.push(store_check("nn/encoder_layer", blocks, master, |store, r| {
        let n = r.gen_range(1..=4);
        let mut b = ParamBuilder::new(store, r, "enc", true);
        let layer = b.encoder_layer("e", 4, 6, 2);
        let x = rand_tensor(r, n, 4);
        let seed = r.gen();
        move |s: &Session| {
            let t = s.tape();
            let out = layer.forward(s, t.constant(x.clone()), None, None)?;
            contract(t, out, seed)
        }
    })?);

    out.push(store_check("policy/gasa_layer", blocks, master, |store, r| {
        let n = r.gen_range(2..=4);
        let mut b = ParamBuilder::new(store, r, "gasa", true);
        let layer = crate::policy::GasaLayer {
            layer: b.encoder_layer("e", 4, 6, 1),
            w: b.scalar("w", -0.3),
            b: b.scalar("b", 0.1),
        };
        let x = rand_tensor(r, n, 4);
        let mut dist = rand_tensor(r, n, n);
        for v in dist.data_mut() {
            *v = v.abs() * 3.0;
        }
        let seed = r.gen();
        move |s: &Session| {
            let t = s.tape();
            let out = layer.forward(s, t.constant(x.clone()), t.constant(dist.clone()))?;
            contract(t, out, seed)
        }
    })?);

    out.push(store_check("latent-provider/encode_views", blocks, master, |store, r| {
        let vocab = Vocabulary::new(3);
        let provider = crate::latent::LatentProvider::new(&tiny_latent(), vocab, store, r, "provider");
        let views: Vec<ViewKey> = (0..r.gen_range(1..=3))
            .map(|_| ViewKey {
                landmark: r.gen_range(0..3),
                bin: r.gen_range(0..4),
            })
            .collect();
        let instruction: Vec<usize> = (0..r.gen_range(1..=4)).map(|_| r.gen_range(0..vocab.size())).collect();
        let seed = r.gen();
        move |s: &Session| {
            let t = s.tape();
            let enc = provider.encode_views(s, &views, &instruction)?;
            let mut parts = enc.merged.clone();
            parts.push(enc.instruction);
            let all = t.concat_rows(&parts)?;
            contract(t, all, seed)
        }
    })?);

    out.push(store_check("policy/score", blocks, master, |store, r| {
        let (env, ep, _) = three_node_world().expect("static world");
        let policy = crate::policy::PolicyNet::new(&tiny_policy(), 6, store, r, "policy");
        let latents: Vec<Tensor> = (0..4).map(|_| rand_tensor(r, 1, 6)).collect();
        let instr = rand_tensor(r, ep.instruction.len(), 6);
        let seed = r.gen();
        move |s: &Session| {
            let t = s.tape();
            let mut mem: GraphMemory<Var> = GraphMemory::new();
            let obs = env.observe(0, crate::env::START_HEADING)?;
            let v: Vec<Var> = (0..obs.candidates.len()).map(|i| t.constant(latents[i].clone())).collect();
            mem.update(&env, 0, &obs, v)?;
            let obs = env.observe(1, env.bearing(0, 1))?;
            let v: Vec<Var> = (0..obs.candidates.len()).map(|i| t.constant(latents[1 + i].clone())).collect();
            mem.update(&env, 1, &obs, v)?;
            let scores = policy.score(s, &mem, t.constant(instr.clone()))?;
            contract(t, scores, seed)
        }
    })?);

    out.push(end_to_end(master)?);
    Ok(out)
}
