//! Topological graph memory and the global action-prediction network.
//!
//! The memory holds every visited node and every unexplored node seen from a
//! visited one. Actions are "go to memory node k" or "stop"; the stop node is
//! implicit and always occupies the last row of every per-node tensor.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::config::PolicyConfig;
use crate::env::{bearing, euclidean, shortest_path_in, EnvGraph, Episode, Observation, WeightedAdjacency, START_HEADING};
use crate::error::{Error, Result};
use crate::latent::{LatentCache, ViewKey};
use crate::model::NavModel;
use crate::nn::{EncoderLayer, Linear, ParamBuilder, ParamId, ParamStore, Session, Attention, LayerNorm};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Visited,
    Unexplored,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Node(usize),
    Stop,
}

#[derive(Clone, Debug)]
pub struct MemoryNode<V> {
    pub id: usize,
    pub status: NodeStatus,
    /// First-visit order starting at 1; 0 while unexplored.
    pub visit_order: usize,
    pub position: [f64; 2],
    /// Own candidate views once visited, otherwise the partial views
    /// contributed by visited neighbours.
    pub views: Vec<V>,
}

/// Per-episode graph memory, generic over the view-latent handle.
#[derive(Clone, Debug)]
pub struct GraphMemory<V> {
    nodes: Vec<MemoryNode<V>>,
    slots: BTreeMap<usize, usize>,
    edges: BTreeMap<(usize, usize), f64>,
    current: Option<usize>,
    heading: f64,
    visits: usize,
}

impl<V: Clone> Default for GraphMemory<V> {
    fn default() -> Self {
        Self::new()
    }
}

impl<V: Clone> GraphMemory<V> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            slots: BTreeMap::new(),
            edges: BTreeMap::new(),
            current: None,
            heading: START_HEADING,
            visits: 0,
        }
    }

    /// Memory nodes in discovery order (the stop node is not included).
    pub fn nodes(&self) -> &[MemoryNode<V>] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> Option<&MemoryNode<V>> {
        self.slots.get(&id).map(|&i| &self.nodes[i])
    }

    pub fn slot(&self, id: usize) -> Option<usize> {
        self.slots.get(&id).copied()
    }

    pub fn current(&self) -> Option<usize> {
        self.current
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn is_visited(&self, id: usize) -> bool {
        self.node(id).is_some_and(|n| n.status == NodeStatus::Visited)
    }

    /// Discovered edges as `(u, v)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.keys().copied()
    }

    pub fn visited_ids(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.status == NodeStatus::Visited)
            .map(|n| n.id)
            .collect()
    }

    fn check_move(&self, env: &EnvGraph, to: usize) -> Result<()> {
        if !env.contains(to) {
            return Err(Error::UnknownNode(to));
        }
        match self.current {
            None => Ok(()),
            Some(from) if from == to => Ok(()),
            Some(from) if self.edges.contains_key(&ordered(from, to)) => Ok(()),
            Some(from) => Err(Error::IllegalMove { from, to }),
        }
    }

    /// Arrive at `arrived` with its observation and one merged latent per
    /// candidate. A node already visited keeps its views and visit order.
    pub fn update(&mut self, env: &EnvGraph, arrived: usize, obs: &Observation, latents: Vec<V>) -> Result<()> {
        self.check_move(env, arrived)?;
        if obs.at != arrived || obs.candidates.len() != latents.len() {
            return Err(Error::Invalid(format!(
                "observation of node {} with {} candidates given {} latents on arrival at {arrived}",
                obs.at,
                obs.candidates.len(),
                latents.len()
            )));
        }
        self.current = Some(arrived);
        self.heading = obs.heading;
        if self.is_visited(arrived) {
            return Ok(());
        }
        self.visits += 1;
        let order = self.visits;
        let slot = self.ensure(env, arrived);
        {
            let n = &mut self.nodes[slot];
            n.status = NodeStatus::Visited;
            n.visit_order = order;
            n.views = latents.clone();
        }
        for (c, lat) in obs.candidates.iter().zip(latents) {
            let len = env
                .edge_length(arrived, c.node)
                .ok_or(Error::IllegalMove { from: arrived, to: c.node })?;
            self.edges.insert(ordered(arrived, c.node), len);
            let s = self.ensure(env, c.node);
            if self.nodes[s].status == NodeStatus::Unexplored {
                self.nodes[s].views.push(lat);
            }
        }
        Ok(())
    }

    /// Move to an already visited node without new observations.
    pub fn revisit(&mut self, env: &EnvGraph, node: usize, heading: f64) -> Result<()> {
        self.check_move(env, node)?;
        if !self.is_visited(node) {
            return Err(Error::Invalid(format!("node {node} has not been visited")));
        }
        self.current = Some(node);
        self.heading = heading;
        Ok(())
    }

    fn ensure(&mut self, env: &EnvGraph, id: usize) -> usize {
        if let Some(&s) = self.slots.get(&id) {
            return s;
        }
        self.nodes.push(MemoryNode {
            id,
            status: NodeStatus::Unexplored,
            visit_order: 0,
            position: env.position(id),
            views: Vec::new(),
        });
        self.slots.insert(id, self.nodes.len() - 1);
        self.nodes.len() - 1
    }

    fn graph(&self) -> WeightedAdjacency {
        let bound = self.slots.keys().next_back().map_or(0, |m| m + 1);
        let edges: Vec<_> = self.edges.iter().map(|(&(u, v), &w)| (u, v, w)).collect();
        WeightedAdjacency::from_edges(bound, &edges)
    }

    /// Shortest path over discovered edges from the current node to `target`,
    /// excluding the current node.
    pub fn route(&self, target: usize) -> Result<Vec<usize>> {
        let from = self.current.ok_or(Error::EmptyInput("memory"))?;
        if self.slots.get(&target).is_none() {
            return Err(Error::UnknownNode(target));
        }
        let (path, _) = shortest_path_in(&self.graph(), from, target)?;
        Ok(path[1..].to_vec())
    }

    /// Memory-graph distance from the current node to every memory node,
    /// indexed by environment node id (∞ for ids not in memory).
    pub fn distances_from_current(&self) -> Result<Vec<f64>> {
        let from = self.current.ok_or(Error::EmptyInput("memory"))?;
        Ok(crate::env::dijkstra(&self.graph(), from))
    }

    /// Actions in score order: memory nodes, then stop.
    pub fn actions(&self) -> Vec<Action> {
        self.nodes
            .iter()
            .map(|n| Action::Node(n.id))
            .chain(std::iter::once(Action::Stop))
            .collect()
    }

    /// `true` = selectable. Visited nodes are masked; stop never is.
    pub fn action_mask(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .map(|n| n.status == NodeStatus::Unexplored)
            .chain(std::iter::once(true))
            .collect()
    }

    /// Position of every memory node followed by the stop node, which sits
    /// at the agent's position.
    pub fn positions(&self) -> Result<Vec<[f64; 2]>> {
        let cur = self.current.ok_or(Error::EmptyInput("memory"))?;
        let here = self.nodes[self.slots[&cur]].position;
        Ok(self.nodes.iter().map(|n| n.position).chain(std::iter::once(here)).collect())
    }

    /// Pairwise Euclidean distances over memory nodes plus stop.
    pub fn affinity(&self) -> Result<Tensor> {
        let p = self.positions()?;
        let n = p.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                d[i * n + j] = euclidean(p[i], p[j]);
            }
        }
        Tensor::matrix(n, n, d)
    }

    pub fn index_of(&self, action: Action) -> Option<usize> {
        match action {
            Action::Stop => Some(self.nodes.len()),
            Action::Node(id) => self.slot(id),
        }
    }

    /// Same structure with a different view payload.
    pub fn map_views<W>(&self, f: impl Fn(&V) -> W) -> GraphMemory<W> {
        GraphMemory {
            nodes: self
                .nodes
                .iter()
                .map(|n| MemoryNode {
                    id: n.id,
                    status: n.status,
                    visit_order: n.visit_order,
                    position: n.position,
                    views: n.views.iter().map(&f).collect(),
                })
                .collect(),
            slots: self.slots.clone(),
            edges: self.edges.clone(),
            current: self.current,
            heading: self.heading,
            visits: self.visits,
        }
    }
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// Self-attention whose logits carry the bias `w·D + b` over pairwise node
/// distances `D`, followed by residual, norm and feed-forward.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GasaLayer {
    pub layer: EncoderLayer,
    pub w: ParamId,
    pub b: ParamId,
}

impl GasaLayer {
    pub fn forward(&self, s: &Session, x: Var, distances: Var) -> Result<Var> {
        let t = s.tape();
        let (n, dn) = (t.value(x).rows(), t.value(distances).shape().to_vec());
        if dn != [n, n] {
            return Err(Error::Shape {
                op: "gasa affinity",
                left: vec![n, n],
                right: dn,
            });
        }
        let bias = t.mul_scalar(distances, s.param(self.w))?;
        let bias = t.add_scalar(bias, s.param(self.b))?;
        self.layer.forward(s, x, Some(bias), None)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CrossModalLayer {
    pub cross: Attention,
    pub norm: LayerNorm,
    pub gasa: GasaLayer,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyNet {
    cfg: PolicyConfig,
    d_lm: usize,
    direction: (Linear, Linear),
    step_table: ParamId,
    stop_embedding: ParamId,
    node_in: Linear,
    node_layers: Vec<EncoderLayer>,
    instr_in: Linear,
    cross_layers: Vec<CrossModalLayer>,
    gasa_layers: Vec<GasaLayer>,
    head: (Linear, Linear),
}

/// Width of the hand-built directional feature.
const DIRECTION_FEATURES: usize = 5;

impl PolicyNet {
    pub fn new(cfg: &PolicyConfig, d_lm: usize, store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str) -> Self {
        let mut b = ParamBuilder::new(store, rng, prefix, true);
        let d = cfg.d_model;
        let hidden = d * cfg.ffn_mult;
        let gasa = |b: &mut ParamBuilder, name: String| GasaLayer {
            layer: b.encoder_layer(&name, d, hidden, cfg.heads),
            w: b.scalar(&format!("{name}.affinity_w"), cfg.affinity_w_init),
            b: b.scalar(&format!("{name}.affinity_b"), cfg.affinity_b_init),
        };
        let direction = (
            b.linear("direction.0", DIRECTION_FEATURES, cfg.direction_hidden, true),
            b.linear("direction.1", cfg.direction_hidden, d_lm, true),
        );
        let step_table = b.embedding("step_table", cfg.step_table, d_lm);
        let stop_embedding = b.embedding("stop", 1, d_lm);
        let node_in = b.linear("node_in", d_lm, d, true);
        let node_layers = (0..cfg.node_encoder_depth)
            .map(|i| b.encoder_layer(&format!("node.{i}"), d, hidden, cfg.heads))
            .collect();
        let instr_in = b.linear("instr_in", d_lm, d, true);
        let cross_layers = (0..cfg.cross_modal_depth)
            .map(|i| CrossModalLayer {
                cross: b.attention(&format!("cross.{i}.attn"), d, d, d, cfg.heads),
                norm: b.layer_norm(&format!("cross.{i}.norm"), d),
                gasa: gasa(&mut b, format!("cross.{i}.gasa")),
            })
            .collect();
        let gasa_layers = (0..cfg.gasa_layers).map(|i| gasa(&mut b, format!("gasa.{i}"))).collect();
        let head = (b.linear("head.0", d, d, true), b.linear("head.1", d, 1, true));
        Self {
            cfg: cfg.clone(),
            d_lm,
            direction,
            step_table,
            stop_embedding,
            node_in,
            node_layers,
            instr_in,
            cross_layers,
            gasa_layers,
            head,
        }
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.cfg
    }

    pub fn cross_layers(&self) -> &[CrossModalLayer] {
        &self.cross_layers
    }

    pub fn gasa_layers(&self) -> &[GasaLayer] {
        &self.gasa_layers
    }

    fn direction_features(mem: &GraphMemory<Var>) -> Result<Tensor> {
        let pos = mem.positions()?;
        let here = *pos.last().expect("stop row");
        let h = mem.heading().to_radians();
        let mut rows = Vec::with_capacity(pos.len());
        for p in pos {
            let dist = euclidean(here, p);
            let (sb, cb) = if dist < 1e-9 {
                (0.0, 0.0)
            } else {
                let rel = (bearing(here, p) - mem.heading()).to_radians();
                (rel.sin(), rel.cos())
            };
            rows.push(vec![sb, cb, dist / 10.0, h.sin(), h.cos()]);
        }
        Tensor::from_rows(&rows)
    }

    /// Per-node input before the node encoder, `[(n+1) × d_lm]`: pooled view
    /// latents plus directional and step embeddings; stop is the last row.
    pub fn node_inputs(&self, s: &Session, mem: &GraphMemory<Var>) -> Result<Var> {
        if mem.is_empty() {
            return Err(Error::EmptyInput("memory"));
        }
        let t = s.tape();
        let mut rows = Vec::with_capacity(mem.len() + 1);
        for n in mem.nodes() {
            rows.push(match n.views.len() {
                0 => return Err(Error::Invalid(format!("memory node {} has no views", n.id))),
                1 => n.views[0],
                _ => t.mean_rows(t.concat_rows(&n.views)?),
            });
        }
        rows.push(s.param(self.stop_embedding));
        let pooled = t.concat_rows(&rows)?;
        if self.cfg.zero_position_embeddings {
            return Ok(pooled);
        }
        let feats = t.constant(Self::direction_features(mem)?);
        let ed = self.direction.0.forward(s, feats)?;
        let ed = self.direction.1.forward(s, t.gelu(ed))?;
        let last = self.cfg.step_table - 1;
        let idx: Vec<usize> = mem.nodes().iter().map(|n| n.visit_order.min(last)).collect();
        let es = t.gather_rows(s.param(self.step_table), &idx)?;
        let es = t.concat_rows(&[es, t.constant(Tensor::zeros(&[1, self.d_lm]))])?;
        t.add(t.add(pooled, ed)?, es)
    }

    /// Node embeddings `[(n+1) × d]` after the node encoder.
    pub fn encode_nodes(&self, s: &Session, mem: &GraphMemory<Var>) -> Result<Var> {
        let x = self.node_inputs(s, mem)?;
        let mut x = self.node_in.forward(s, x)?;
        for layer in &self.node_layers {
            x = layer.forward(s, x, None, None)?;
        }
        Ok(x)
    }

    /// Cross-attention to the instruction then graph-aware self-attention, per
    /// layer; then any stand-alone graph-aware layers.
    pub fn cross_modal_encode(&self, s: &Session, x: Var, instruction: Var, distances: Var) -> Result<Var> {
        let t = s.tape();
        let mut x = x;
        if !self.cross_layers.is_empty() {
            if t.value(instruction).rows() == 0 {
                return Err(Error::EmptyInput("instruction latents"));
            }
            let instr = self.instr_in.forward(s, instruction)?;
            for l in &self.cross_layers {
                let c = l.cross.forward(s, x, instr, None, None)?;
                x = l.norm.forward(s, t.add(x, c)?)?;
                x = l.gasa.forward(s, x, distances)?;
            }
        }
        for g in &self.gasa_layers {
            x = g.forward(s, x, distances)?;
        }
        Ok(x)
    }

    /// Raw score per action, `[(n+1) × 1]`, in [`GraphMemory::actions`] order.
    pub fn score(&self, s: &Session, mem: &GraphMemory<Var>, instruction: Var) -> Result<Var> {
        let t = s.tape();
        let x = self.encode_nodes(s, mem)?;
        let d = t.constant(mem.affinity()?);
        let x = self.cross_modal_encode(s, x, instruction, d)?;
        let h = t.gelu(self.head.0.forward(s, x)?);
        self.head.1.forward(s, h)
    }
}

/// Greedy choice: highest unmasked score; ties go to the smallest node id and
/// stop loses ties against any node.
pub fn greedy_action(scores: &[f64], mask: &[bool], actions: &[Action]) -> Result<Action> {
    let mut best: Option<(f64, Action)> = None;
    for ((&v, &keep), &a) in scores.iter().zip(mask).zip(actions) {
        if !keep {
            continue;
        }
        best = match best {
            None => Some((v, a)),
            Some((bv, ba)) if v > bv || (v == bv && a < ba) => Some((v, a)),
            keep_best => keep_best,
        };
    }
    best.map(|(_, a)| a).ok_or(Error::DegenerateMask { row: 0 })
}

/// `softmax(scores / temperature)` over unmasked entries; masked entries are
/// exactly zero.
pub fn action_probabilities(scores: &[f64], mask: &[bool], temperature: f64) -> Result<Vec<f64>> {
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &k)| k)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateMask { row: 0 });
    }
    let mut p: Vec<f64> = scores
        .iter()
        .zip(mask)
        .map(|(&v, &k)| if k { ((v - max) / temperature).exp() } else { 0.0 })
        .collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    Ok(p)
}

pub fn sample_action(
    scores: &[f64],
    mask: &[bool],
    actions: &[Action],
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Action> {
    let p = action_probabilities(scores, mask, temperature)?;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = None;
    for (i, &pi) in p.iter().enumerate() {
        if pi == 0.0 {
            continue;
        }
        acc += pi;
        last = Some(i);
        if u < acc {
            return Ok(actions[i]);
        }
    }
    Ok(actions[last.expect("at least one unmasked action")])
}

/// Where view latents come from during a rollout.
#[derive(Clone, Copy)]
pub enum LatentSource<'a> {
    /// Frozen provider: detached latents memoised across episodes.
    Cached(&'a LatentCache),
    /// Provider evaluated on the rollout's own tape.
    Live,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decision {
    pub take: Action,
    /// Supervision target for this step, if any.
    pub label: Option<Action>,
}

pub struct DecisionContext<'a> {
    pub step: usize,
    pub scores: &'a [f64],
    pub mask: &'a [bool],
    pub actions: &'a [Action],
    pub memory: &'a GraphMemory<Var>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub current: usize,
    /// Action node ids in score order (stop excluded).
    pub candidates: Vec<usize>,
    /// Score per candidate followed by stop; masked entries are null.
    pub scores: Vec<Option<f64>>,
    pub chosen: Action,
    pub route: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Action>,
}

pub struct Rollout {
    /// Every physically traversed node, starting with the start node.
    pub trajectory: Vec<usize>,
    pub steps: Vec<StepLog>,
    pub stopped: bool,
    /// Sum of per-step negative log-likelihoods of the labels.
    pub loss: Option<Var>,
    pub labelled_steps: usize,
}

/// Drives one episode: observe, encode, update memory, score, let `decide`
/// pick an action, route to it hop by hop. Ends on stop or after
/// `max_steps` decisions.
pub fn run_policy<F>(
    s: &Session,
    model: &NavModel,
    source: LatentSource,
    env: &EnvGraph,
    episode: &Episode,
    max_steps: usize,
    mut decide: F,
) -> Result<Rollout>
where
    F: FnMut(&DecisionContext) -> Result<Decision>,
{
    let t = s.tape();
    let instruction = &episode.instruction;
    let mut mem: GraphMemory<Var> = GraphMemory::new();
    let mut trajectory = vec![episode.start];
    let obs = env.observe(episode.start, START_HEADING)?;
    let (latents, instr) = model.observation_latents(s, source, instruction, &obs)?;
    mem.update(env, episode.start, &obs, latents)?;

    let mut steps = Vec::new();
    let mut loss: Option<Var> = None;
    let mut labelled = 0;
    let mut stopped = false;
    for step in 0..max_steps {
        let scores = model.policy.score(s, &mem, instr)?;
        let values = t.value(scores).data().to_vec();
        let mask = mem.action_mask();
        let actions = mem.actions();
        let d = decide(&DecisionContext {
            step,
            scores: &values,
            mask: &mask,
            actions: &actions,
            memory: &mem,
        })?;
        if let Some(label) = d.label {
            let idx = mem.index_of(label).ok_or(Error::Label(usize::MAX))?;
            let term = t.nll(scores, Some(&mask), idx)?;
            loss = Some(match loss {
                Some(l) => t.add(l, term)?,
                None => term,
            });
            labelled += 1;
        }
        let current = mem.current().expect("memory has a current node");
        let mut log = StepLog {
            step,
            current,
            candidates: mem.nodes().iter().map(|n| n.id).collect(),
            scores: values.iter().zip(&mask).map(|(&v, &k)| k.then_some(v)).collect(),
            chosen: d.take,
            route: Vec::new(),
            label: d.label,
        };
        let target = match d.take {
            Action::Stop => {
                steps.push(log);
                stopped = true;
                break;
            }
            Action::Node(id) => id,
        };
        match mem.index_of(d.take) {
            Some(i) if mask[i] => {}
            _ => return Err(Error::IllegalMove { from: current, to: target }),
        }
        let route = mem.route(target)?;
        let mut at = current;
        for &hop in &route {
            let heading = env.bearing(at, hop);
            if mem.is_visited(hop) {
                mem.revisit(env, hop, heading)?;
            } else {
                let obs = env.observe(hop, heading)?;
                let (latents, _) = model.observation_latents(s, source, instruction, &obs)?;
                mem.update(env, hop, &obs, latents)?;
            }
            trajectory.push(hop);
            at = hop;
        }
        log.route = route;
        steps.push(log);
    }
    Ok(Rollout {
        trajectory,
        steps,
        stopped,
        loss,
        labelled_steps: labelled,
    })
}

/// Greedy inference rollout without gradient tracking.
pub fn greedy_rollout(
    model: &NavModel,
    cache: Option<&LatentCache>,
    env: &EnvGraph,
    episode: &Episode,
    max_steps: usize,
) -> Result<Rollout> {
    let s = Session::new(&model.store, false);
    let source = model.latent_source(cache);
    run_policy(&s, model, source, env, episode, max_steps, |c| {
        Ok(Decision {
            take: greedy_action(c.scores, c.mask, c.actions)?,
            label: None,
        })
    })
}

/// Views for an observation as the provider keys them.
pub fn view_keys(obs: &Observation) -> Vec<ViewKey> {
    obs.candidates.iter().map(ViewKey::of).collect()
}

/// Writes per-step logs as JSON Lines.
pub fn write_step_logs<W: std::io::Write>(out: &mut W, episode_id: &str, steps: &[StepLog]) -> Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        episode_id: &'a str,
        #[serde(flatten)]
        step: &'a StepLog,
    }
    for st in steps {
        serde_json::to_writer(&mut *out, &Line { episode_id, step: st })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Visited set only grows and discovered edges only grow between snapshots.
pub fn memory_grew<V: Clone, W: Clone>(before: &GraphMemory<V>, after: &GraphMemory<W>) -> bool {
    let vb: BTreeSet<usize> = before.visited_ids().into_iter().collect();
    let va: BTreeSet<usize> = after.visited_ids().into_iter().collect();
    let eb: BTreeSet<_> = before.edges().collect();
    let ea: BTreeSet<_> = after.edges().collect();
    vb.is_subset(&va) && eb.is_subset(&ea)
}
