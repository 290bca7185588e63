//! Policy learning: teacher-forced and on-policy rollouts, pseudo-labels,
//! AdamW with warmup + cosine decay, and checkpoints.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{PseudoLabelRule, RunConfig};
use crate::dataset::Dataset;
use crate::env::{tie_tolerance, EnvGraph, Episode};
use crate::error::{Error, Result};
use crate::eval::{evaluate, thread_count};
use crate::latent::LatentCache;
use crate::model::NavModel;
use crate::nn::{ParamGrads, ParamStore, Session};
use crate::policy::{run_policy, sample_action, Action, Decision, GraphMemory, LatentSource, NodeStatus, Rollout};
use crate::rng;
use crate::tensor::Tensor;

/// `λ·L_BC + L_DAG`.
pub fn total_loss(lambda: f64, bc: f64, dag: f64) -> f64 {
    lambda * bc + dag
}

/// Supervision target on a partial graph: stop when within `threshold` of
/// the goal, otherwise the unexplored memory node minimising the rule's cost.
pub fn pseudo_label<V: Clone>(
    mem: &GraphMemory<V>,
    env: &EnvGraph,
    goal: usize,
    threshold: f64,
    rule: PseudoLabelRule,
) -> Result<Action> {
    let cur = mem.current().ok_or(Error::EmptyInput("memory"))?;
    if env.geodesic_distance(cur, goal)? < threshold {
        return Ok(Action::Stop);
    }
    let md = mem.distances_from_current()?;
    let mut costs = Vec::new();
    for n in mem.nodes() {
        if n.status != NodeStatus::Unexplored {
            continue;
        }
        let remaining = env.geodesic_distance(n.id, goal)?;
        let cost = match rule {
            PseudoLabelRule::PathPlusRemaining => md[n.id] + remaining,
            PseudoLabelRule::RemainingOnly => remaining,
        };
        costs.push((n.id, cost));
    }
    let Some(best) = costs.iter().map(|c| c.1).reduce(f64::min) else {
        return Ok(Action::Stop);
    };
    let tol = tie_tolerance(best);
    let id = costs
        .iter()
        .filter(|c| c.1 <= best + tol)
        .map(|c| c.0)
        .min()
        .expect("non-empty");
    Ok(Action::Node(id))
}

/// Teacher-forced rollout along the ground-truth path; the label at each
/// step is the next path node and, at the goal, stop.
pub fn bc_rollout(s: &Session, model: &NavModel, source: LatentSource, env: &EnvGraph, ep: &Episode) -> Result<Rollout> {
    let path = &ep.path;
    run_policy(s, model, source, env, ep, path.len(), |c| {
        let cur = c.memory.current().expect("current node");
        if path.get(c.step) != Some(&cur) {
            return Err(Error::Label(cur));
        }
        let a = match path.get(c.step + 1) {
            Some(&next) => Action::Node(next),
            None => Action::Stop,
        };
        Ok(Decision { take: a, label: Some(a) })
    })
}

#[derive(Clone, Copy, Debug)]
pub struct DaggerParams {
    pub temperature: f64,
    pub max_steps: usize,
    pub threshold: f64,
    pub rule: PseudoLabelRule,
}

impl DaggerParams {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            temperature: cfg.train.temperature,
            max_steps: cfg.policy.max_steps,
            threshold: cfg.eval.success_threshold,
            rule: cfg.train.pseudo_label,
        }
    }
}

/// On-policy rollout: actions are sampled, each step is labelled with the
/// pseudo-label of the current partial graph.
pub fn dagger_rollout(
    s: &Session,
    model: &NavModel,
    source: LatentSource,
    env: &EnvGraph,
    ep: &Episode,
    p: DaggerParams,
    rng: &mut ChaCha8Rng,
) -> Result<Rollout> {
    run_policy(s, model, source, env, ep, p.max_steps, |c| {
        let label = pseudo_label(c.memory, env, ep.goal, p.threshold, p.rule)?;
        let take = sample_action(c.scores, c.mask, c.actions, p.temperature, rng)?;
        Ok(Decision {
            take,
            label: Some(label),
        })
    })
}

/// Linear warmup from `floor` to `peak`, then cosine decay to zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub floor: f64,
    pub peak: f64,
    pub warmup: usize,
    pub total: usize,
}

impl LrSchedule {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            floor: cfg.train.lr_floor,
            peak: cfg.train.lr_peak,
            warmup: cfg.train.warmup_steps,
            total: cfg.train.total_steps,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.floor + (self.peak - self.floor) * step as f64 / self.warmup as f64;
        }
        let span = self.total.saturating_sub(self.warmup);
        if span == 0 {
            return self.peak;
        }
        let progress = ((step - self.warmup) as f64 / span as f64).min(1.0);
        0.5 * self.peak * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Adam with decoupled weight decay; decay applies to rank-2 tensors only.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(store: &ParamStore, cfg: &RunConfig) -> Self {
        let z: Vec<Vec<f64>> = store.entries().iter().map(|e| vec![0.0; e.value.len()]).collect();
        Self {
            beta1: cfg.train.beta1,
            beta2: cfg.train.beta2,
            eps: cfg.train.adam_eps,
            weight_decay: cfg.train.weight_decay,
            t: 0,
            m: z.clone(),
            v: z,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..store.len() {
            let entry = store.entry_mut(crate::nn::ParamId(i));
            if !entry.trainable {
                continue;
            }
            let decay = if entry.value.shape().len() == 2 { self.weight_decay } else { 0.0 };
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads.grads[i]);
            for (k, w) in entry.value.data_mut().iter_mut().enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                *w -= lr * (mh / (vh.sqrt() + self.eps) + decay * *w);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub loss_bc: f64,
    pub loss_dag: f64,
    pub eval_sr: Option<f64>,
    pub eval_spl: Option<f64>,
}

pub const LOG_HEADER: &str = "step,lr,loss_bc,loss_dag,eval_SR,eval_SPL";

impl LogRow {
    pub fn csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| format!("{v:.2}")).unwrap_or_default();
        format!(
            "{},{:e},{:.6},{:.6},{},{}",
            self.step,
            self.lr,
            self.loss_bc,
            self.loss_dag,
            opt(self.eval_sr),
            opt(self.eval_spl)
        )
    }
}

/// Loss and gradient of one episode's contribution.
pub struct EpisodeLoss {
    pub bc: f64,
    pub dag: f64,
    pub total: f64,
    pub grads: ParamGrads,
}

/// Which objectives a step optimises.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Both,
    BcOnly,
    DaggerOnly,
}

/// `λ·L_BC + L_DAG` for one episode with gradients. The BC rollout is
/// skipped entirely when its weight is zero.
pub fn episode_loss(
    model: &NavModel,
    cache: Option<&LatentCache>,
    cfg: &RunConfig,
    env: &EnvGraph,
    ep: &Episode,
    objective: Objective,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeLoss> {
    let s = Session::new(&model.store, true);
    let t = s.tape();
    let source = model.latent_source(cache);
    let lambda = match objective {
        Objective::DaggerOnly => 0.0,
        Objective::BcOnly => 1.0,
        Objective::Both => cfg.train.lambda,
    };
    let use_dag = cfg.train.dagger && objective != Objective::BcOnly;
    let mut total: Option<crate::autograd::Var> = None;
    let mut bc = 0.0;
    let mut dag = 0.0;
    if lambda > 0.0 {
        let r = bc_rollout(&s, model, source, env, ep)?;
        let l = r.loss.expect("teacher-forced rollouts are labelled");
        bc = t.value(l).item();
        total = Some(t.scale(l, lambda));
    }
    if use_dag {
        let r = dagger_rollout(&s, model, source, env, ep, DaggerParams::from_config(cfg), rng)?;
        if let Some(l) = r.loss {
            dag = t.value(l).item();
            total = Some(match total {
                Some(x) => t.add(x, l)?,
                None => l,
            });
        }
    }
    let Some(total) = total else {
        return Ok(EpisodeLoss {
            bc,
            dag,
            total: 0.0,
            grads: ParamGrads::zeros(&model.store),
        });
    };
    let value = t.value(total).item();
    let grads = if value.is_finite() {
        s.backward(total)?
    } else {
        ParamGrads::zeros(&model.store)
    };
    Ok(EpisodeLoss {
        bc,
        dag,
        total: value,
        grads,
    })
}

pub struct StepStats {
    pub step: usize,
    pub lr: f64,
    pub loss_bc: f64,
    pub loss_dag: f64,
    pub loss: f64,
}

pub struct Trainer {
    pub cfg: RunConfig,
    pub model: NavModel,
    pub optimizer: AdamW,
    /// Completed optimiser steps.
    pub step: usize,
    pub cache: LatentCache,
    schedule: LrSchedule,
    epoch_order: Option<(usize, Vec<usize>)>,
}

impl Trainer {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let model = NavModel::from_config(cfg);
        let optimizer = AdamW::new(&model.store, cfg);
        Ok(Self {
            cfg: cfg.clone(),
            schedule: LrSchedule::from_config(cfg),
            model,
            optimizer,
            step: 0,
            cache: LatentCache::new(),
            epoch_order: None,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut tr = Self::new(&ck.config)?;
        tr.model.load_values(&ck.params)?;
        tr.optimizer.t = ck.adam_t;
        tr.optimizer.m = ck.adam_m.clone();
        tr.optimizer.v = ck.adam_v.clone();
        tr.step = ck.step as usize;
        Ok(tr)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            step: self.step as u64,
            params: self
                .model
                .store
                .entries()
                .iter()
                .map(|e| (e.name.clone(), e.value.clone()))
                .collect(),
            adam_t: self.optimizer.t,
            adam_m: self.optimizer.m.clone(),
            adam_v: self.optimizer.v.clone(),
        }
    }

    fn cache(&self) -> Option<&LatentCache> {
        Some(&self.cache)
    }

    /// Episode index for slot `slot` of step `step`: epochs are independent
    /// seeded permutations, so the order depends only on the position.
    fn episode_index(&mut self, n: usize, step: usize, slot: usize) -> usize {
        let pos = step * self.cfg.train.batch_size + slot;
        let epoch = pos / n;
        if self.epoch_order.as_ref().map(|e| e.0) != Some(epoch) {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng::substream(self.cfg.seed, rng::BATCH, epoch as u64));
            self.epoch_order = Some((epoch, order));
        }
        self.epoch_order.as_ref().expect("set above").1[pos % n]
    }

    fn objective(&self) -> Objective {
        if self.cfg.train.alternate && self.cfg.train.dagger {
            if self.step.is_multiple_of(2) {
                Objective::BcOnly
            } else {
                Objective::DaggerOnly
            }
        } else {
            Objective::Both
        }
    }

    /// One optimiser step over a minibatch; gradients are averaged over the
    /// batch in slot order.
    pub fn train_step(&mut self, data: &Dataset) -> Result<StepStats> {
        let n = data.episodes.len();
        if n == 0 {
            return Err(Error::EmptyInput("training episodes"));
        }
        let b = self.cfg.train.batch_size;
        let objective = self.objective();
        let mut grads = ParamGrads::zeros(&self.model.store);
        let (mut sum_bc, mut sum_dag, mut sum) = (0.0, 0.0, 0.0);
        let mut dump = Vec::new();
        let mut finite = true;
        for slot in 0..b {
            let idx = self.episode_index(n, self.step, slot);
            let ep = &data.episodes[idx];
            let env = data.env(&ep.env_id)?;
            let mut r = rng::substream(self.cfg.seed, rng::DAGGER, (self.step * b + slot) as u64);
            let l = episode_loss(&self.model, self.cache(), &self.cfg, env, ep, objective, &mut r)?;
            if !l.total.is_finite() || !l.grads.is_finite() {
                finite = false;
            }
            dump.push(serde_json::json!({
                "episode_id": ep.id, "env_id": ep.env_id, "loss_bc": l.bc, "loss_dag": l.dag,
            }));
            sum_bc += l.bc;
            sum_dag += l.dag;
            sum += l.total;
            grads.add_assign(&l.grads);
        }
        if !finite {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                dump: serde_json::to_string(&dump)?,
            });
        }
        grads.scale(1.0 / b as f64);
        if let Some(clip) = self.cfg.train.grad_clip {
            let norm = grads.norm();
            if norm > clip {
                grads.scale(clip / norm);
            }
        }
        let lr = self.schedule.lr(self.step);
        self.optimizer.step(&mut self.model.store, &grads, lr);
        if self.cfg.latent.trainable {
            self.cache.clear();
        }
        self.step += 1;
        Ok(StepStats {
            step: self.step,
            lr,
            loss_bc: sum_bc / b as f64,
            loss_dag: sum_dag / b as f64,
            loss: sum / b as f64,
        })
    }

    pub fn evaluate(&self, data: &Dataset) -> Result<crate::eval::MetricReport> {
        let data = data.truncated(self.cfg.eval.max_episodes);
        evaluate(
            &self.model,
            self.cache(),
            &data,
            self.cfg.policy.max_steps,
            self.cfg.eval.success_threshold,
            thread_count(),
        )
    }

    /// Trains until `total_steps`, evaluating every `eval_every` steps.
    /// Checkpoints and the CSV log go to `out_dir` when given.
    pub fn run(
        &mut self,
        train: &Dataset,
        eval: Option<&Dataset>,
        out_dir: Option<&Path>,
        mut on_row: impl FnMut(&LogRow),
    ) -> Result<Vec<LogRow>> {
        let mut log_file = match out_dir {
            Some(d) => {
                std::fs::create_dir_all(d)?;
                let path = d.join("train_log.csv");
                let fresh = self.step == 0 || !path.exists();
                let mut f = std::fs::OpenOptions::new()
                    .create(true)
                    .append(!fresh)
                    .write(true)
                    .truncate(fresh)
                    .open(path)?;
                if fresh {
                    writeln!(f, "{LOG_HEADER}")?;
                }
                Some(f)
            }
            None => None,
        };
        let mut rows = Vec::new();
        while self.step < self.cfg.train.total_steps {
            let st = match self.train_step(train) {
                Ok(st) => st,
                Err(Error::NonFiniteLoss { step, dump }) => {
                    if let Some(d) = out_dir {
                        std::fs::write(d.join(format!("nonfinite_step{step}.json")), &dump)?;
                    }
                    return Err(Error::NonFiniteLoss { step, dump });
                }
                Err(e) => return Err(e),
            };
            let mut row = LogRow {
                step: st.step,
                lr: st.lr,
                loss_bc: st.loss_bc,
                loss_dag: st.loss_dag,
                eval_sr: None,
                eval_spl: None,
            };
            let every = self.cfg.train.eval_every;
            let periodic = every > 0 && (st.step % every == 0 || st.step == self.cfg.train.total_steps);
            if periodic {
                if let Some(ev) = eval {
                    let rep = self.evaluate(ev)?;
                    row.eval_sr = Some(rep.summary.sr);
                    row.eval_spl = Some(rep.summary.spl);
                }
                if let Some(d) = out_dir {
                    self.checkpoint().save(&d.join("checkpoint.bin"))?;
                }
            }
            if let Some(f) = log_file.as_mut() {
                writeln!(f, "{}", row.csv())?;
            }
            on_row(&row);
            rows.push(row);
        }
        if let Some(d) = out_dir {
            self.checkpoint().save(&d.join("checkpoint.bin"))?;
        }
        Ok(rows)
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NAVLABCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Complete training state. Randomness is counter-based (derived from the
/// seed and the step), so the step counter fully determines the RNG state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub step: u64,
    pub params: Vec<(String, Tensor)>,
    pub adam_t: u64,
    pub adam_m: Vec<Vec<f64>>,
    pub adam_v: Vec<Vec<f64>>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Corrupt("unexpected end of checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()? as usize;
        if n > self.buf.len() {
            return Err(Error::Corrupt(format!("implausible length {n}")));
        }
        Ok(n)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Corrupt("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Corrupt("invalid utf-8".into()))
    }
}

impl Checkpoint {
    /// Layout (little-endian): magic, version u32, config hash [32], config
    /// JSON, step, named tensors, optimiser state, then SHA-256 of all
    /// preceding bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        let put_len = |b: &mut Vec<u8>, n: usize| b.extend_from_slice(&(n as u64).to_le_bytes());
        let put_f64s = |b: &mut Vec<u8>, xs: &[f64]| xs.iter().for_each(|x| b.extend_from_slice(&x.to_le_bytes()));
        b.extend_from_slice(CHECKPOINT_MAGIC);
        b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        b.extend_from_slice(&self.config.hash());
        let cfg = self.config.to_json();
        put_len(&mut b, cfg.len());
        b.extend_from_slice(cfg.as_bytes());
        b.extend_from_slice(&self.step.to_le_bytes());
        put_len(&mut b, self.params.len());
        for (name, t) in &self.params {
            put_len(&mut b, name.len());
            b.extend_from_slice(name.as_bytes());
            put_len(&mut b, t.shape().len());
            for &d in t.shape() {
                put_len(&mut b, d);
            }
            put_f64s(&mut b, t.data());
        }
        b.extend_from_slice(&self.adam_t.to_le_bytes());
        for (m, v) in self.adam_m.iter().zip(&self.adam_v) {
            put_len(&mut b, m.len());
            put_f64s(&mut b, m);
            put_f64s(&mut b, v);
        }
        let digest = Sha256::digest(&b);
        b.extend_from_slice(&digest);
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 + 4 + 32 + 32 {
            return Err(Error::Corrupt("checkpoint too short".into()));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Corrupt("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Corrupt("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 12 };
        let hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let config = RunConfig::from_json(&r.string()?)?;
        if config.hash() != hash {
            return Err(Error::Corrupt("config hash mismatch".into()));
        }
        let step = r.u64()?;
        let count = r.len()?;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.len()?;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let data = r.f64s(shape.iter().product())?;
            params.push((name, Tensor::new(shape, data).map_err(|e| Error::Corrupt(e.to_string()))?));
        }
        let adam_t = r.u64()?;
        let (mut adam_m, mut adam_v) = (Vec::with_capacity(count), Vec::with_capacity(count));
        for _ in 0..count {
            let n = r.len()?;
            adam_m.push(r.f64s(n)?);
            adam_v.push(r.f64s(n)?);
        }
        if r.pos != body.len() {
            return Err(Error::Corrupt("trailing bytes".into()));
        }
        Ok(Self {
            config,
            step,
            params,
            adam_t,
            adam_m,
            adam_v,
        })
    }

    /// Written to a temporary sibling and renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Model with the checkpoint's parameters.
    pub fn model(&self) -> Result<NavModel> {
        let mut m = NavModel::from_config(&self.config);
        m.load_values(&self.params)?;
        Ok(m)
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn digest_hex(&self) -> String {
        Sha256::digest(self.to_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
