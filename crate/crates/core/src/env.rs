//! Navigation worlds: positioned nodes joined by undirected edges whose
//! lengths are the Euclidean distances between endpoints.
//!
//! Conventions used everywhere in the crate:
//! * positions are 2D, in meters;
//! * bearings and headings are degrees clockwise from the +y axis, in [0, 360);
//! * a candidate's relative angle is `(bearing − heading) mod 360`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Heading every episode starts with (facing +y).
pub const START_HEADING: f64 = 0.0;

/// Relative-angle bins shared by instructions, view features and prompts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Front,
    Right,
    Rear,
    Left,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Front, Direction::Right, Direction::Rear, Direction::Left];

    /// `[315,45)` front, `[45,135)` right, `[135,225)` rear, `[225,315)` left.
    pub fn from_angle(angle: f64) -> Self {
        let a = normalize_degrees(angle);
        if !(45.0..315.0).contains(&a) {
            Direction::Front
        } else if a < 135.0 {
            Direction::Right
        } else if a < 225.0 {
            Direction::Rear
        } else {
            Direction::Left
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn word(self) -> &'static str {
        match self {
            Direction::Front => "front",
            Direction::Right => "right",
            Direction::Rear => "rear",
            Direction::Left => "left",
        }
    }
}

pub fn normalize_degrees(a: f64) -> f64 {
    let r = a.rem_euclid(360.0);
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Bearing from `from` to `to`, clockwise from +y.
pub fn bearing(from: [f64; 2], to: [f64; 2]) -> f64 {
    normalize_degrees((to[0] - from[0]).atan2(to[1] - from[1]).to_degrees())
}

pub fn euclidean(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Instruction vocabulary: four direction tokens followed by one token per
/// landmark id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub landmarks: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Token {
    Direction(Direction),
    Landmark(usize),
}

impl Vocabulary {
    pub const DIRECTION_TOKENS: usize = 4;

    pub fn new(landmarks: usize) -> Self {
        Self { landmarks }
    }

    pub fn size(&self) -> usize {
        Self::DIRECTION_TOKENS + self.landmarks
    }

    pub fn direction_token(&self, d: Direction) -> usize {
        d.index()
    }

    pub fn landmark_token(&self, landmark: usize) -> usize {
        Self::DIRECTION_TOKENS + landmark
    }

    pub fn decode(&self, token: usize) -> Result<Token> {
        if token >= self.size() {
            return Err(Error::Vocab {
                token,
                size: self.size(),
            });
        }
        Ok(if token < Self::DIRECTION_TOKENS {
            Token::Direction(Direction::ALL[token])
        } else {
            Token::Landmark(token - Self::DIRECTION_TOKENS)
        })
    }
}

/// Anything Dijkstra can run over.
pub trait WeightedGraph {
    /// Exclusive upper bound on node ids.
    fn node_bound(&self) -> usize;
    fn for_each_neighbor(&self, node: usize, f: &mut dyn FnMut(usize, f64));
}

/// Explicitly weighted undirected graph (weights need not be geometric).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightedAdjacency {
    adj: Vec<Vec<(usize, f64)>>,
}

impl WeightedAdjacency {
    pub fn new(node_bound: usize) -> Self {
        Self {
            adj: vec![Vec::new(); node_bound],
        }
    }

    pub fn from_edges(node_bound: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut g = Self::new(node_bound);
        for &(u, v, w) in edges {
            g.add_edge(u, v, w);
        }
        g
    }

    /// Inserts (or overwrites) the undirected edge `u–v`.
    pub fn add_edge(&mut self, u: usize, v: usize, w: f64) {
        for (a, b) in [(u, v), (v, u)] {
            let list = &mut self.adj[a];
            match list.binary_search_by_key(&b, |&(x, _)| x) {
                Ok(i) => list[i].1 = w,
                Err(i) => list.insert(i, (b, w)),
            }
        }
    }

    pub fn neighbors(&self, u: usize) -> &[(usize, f64)] {
        &self.adj[u]
    }
}

impl WeightedGraph for WeightedAdjacency {
    fn node_bound(&self) -> usize {
        self.adj.len()
    }

    fn for_each_neighbor(&self, node: usize, f: &mut dyn FnMut(usize, f64)) {
        for &(w, len) in &self.adj[node] {
            f(w, len);
        }
    }
}

#[derive(Copy, Clone, PartialEq)]
struct HeapEntry {
    cost: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source distances; unreachable nodes get `f64::INFINITY`.
pub fn dijkstra<G: WeightedGraph + ?Sized>(g: &G, source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; g.node_bound()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapEntry { cost: 0.0, node: source });
    while let Some(HeapEntry { cost, node }) = heap.pop() {
        if cost > dist[node] {
            continue;
        }
        g.for_each_neighbor(node, &mut |next, len| {
            let c = cost + len;
            if c < dist[next] {
                dist[next] = c;
                heap.push(HeapEntry { cost: c, node: next });
            }
        });
    }
    dist
}

/// Tolerance under which two path lengths count as tied.
pub fn tie_tolerance(length: f64) -> f64 {
    1e-9 * length.max(1.0)
}

/// Minimum-length path, ties broken by the lexicographically smallest node
/// sequence. Returns the path and the summed edge length along it.
pub fn shortest_path_in<G: WeightedGraph + ?Sized>(g: &G, from: usize, to: usize) -> Result<(Vec<usize>, f64)> {
    let n = g.node_bound();
    if from >= n {
        return Err(Error::UnknownNode(from));
    }
    if to >= n {
        return Err(Error::UnknownNode(to));
    }
    if from == to {
        return Ok((vec![from], 0.0));
    }
    let to_target = dijkstra(g, to);
    let total = to_target[from];
    if !total.is_finite() {
        return Err(Error::Disconnected { from, to });
    }
    let tol = tie_tolerance(total);
    let mut path = vec![from];
    let mut travelled = 0.0;
    let mut u = from;
    while u != to {
        let mut best: Option<(usize, f64)> = None;
        g.for_each_neighbor(u, &mut |w, len| {
            let through = travelled + len + to_target[w];
            if (through - total).abs() <= tol && best.is_none_or(|(b, _)| w < b) {
                best = Some((w, len));
            }
        });
        let (w, len) = best.ok_or(Error::Disconnected { from, to })?;
        travelled += len;
        path.push(w);
        u = w;
        if path.len() > n {
            return Err(Error::Disconnected { from, to });
        }
    }
    Ok((path, travelled))
}

/// One navigable neighbor as seen from the agent's node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub node: usize,
    /// View descriptor: the landmark visible in this direction.
    pub landmark: usize,
    /// Relative angle in degrees, [0, 360).
    pub angle: f64,
}

impl Candidate {
    pub fn direction(&self) -> Direction {
        Direction::from_angle(self.angle)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub at: usize,
    pub heading: f64,
    pub candidates: Vec<Candidate>,
}

/// An immutable navigation world.
#[derive(Clone, Debug)]
pub struct EnvGraph {
    id: String,
    positions: Vec<[f64; 2]>,
    landmarks: Vec<usize>,
    adjacency: Vec<Vec<(usize, f64)>>,
    geodesics: OnceLock<Vec<Vec<f64>>>,
}

impl PartialEq for EnvGraph {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.positions == other.positions
            && self.landmarks == other.landmarks
            && self.adjacency == other.adjacency
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: usize,
    x: f64,
    y: f64,
    landmark: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvFile {
    nodes: Vec<NodeRecord>,
    edges: Vec<[usize; 2]>,
}

impl WeightedGraph for EnvGraph {
    fn node_bound(&self) -> usize {
        self.positions.len()
    }

    fn for_each_neighbor(&self, node: usize, f: &mut dyn FnMut(usize, f64)) {
        for &(w, len) in &self.adjacency[node] {
            f(w, len);
        }
    }
}

impl EnvGraph {
    /// Builds a world; edge lengths are derived from positions. Fails on
    /// out-of-range ids, self loops, non-finite positions or a disconnected
    /// graph.
    pub fn new(
        id: impl Into<String>,
        positions: Vec<[f64; 2]>,
        landmarks: Vec<usize>,
        edges: &[(usize, usize)],
    ) -> Result<Self> {
        let n = positions.len();
        if n == 0 {
            return Err(Error::EmptyInput("environment has no nodes"));
        }
        if landmarks.len() != n {
            return Err(Error::Invalid(format!(
                "{} landmarks for {n} nodes",
                landmarks.len()
            )));
        }
        if positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite node position".into()));
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n {
                return Err(Error::UnknownNode(u));
            }
            if v >= n {
                return Err(Error::UnknownNode(v));
            }
            if u == v {
                return Err(Error::Invalid(format!("self loop at node {u}")));
            }
            let len = euclidean(positions[u], positions[v]);
            if len <= 0.0 {
                return Err(Error::Invalid(format!("zero-length edge {u}-{v}")));
            }
            adjacency[u].push((v, len));
            adjacency[v].push((u, len));
        }
        for list in &mut adjacency {
            list.sort_by_key(|&(w, _)| w);
            list.dedup_by_key(|&mut (w, _)| w);
        }
        let env = Self {
            id: id.into(),
            positions,
            landmarks,
            adjacency,
            geodesics: OnceLock::new(),
        };
        if !env.is_connected() {
            return Err(Error::Invalid("environment graph is disconnected".into()));
        }
        Ok(env)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn node_count(&self) -> usize {
        self.positions.len()
    }

    pub fn position(&self, node: usize) -> [f64; 2] {
        self.positions[node]
    }

    pub fn landmark(&self, node: usize) -> usize {
        self.landmarks[node]
    }

    pub fn neighbors(&self, node: usize) -> &[(usize, f64)] {
        &self.adjacency[node]
    }

    pub fn contains(&self, node: usize) -> bool {
        node < self.node_count()
    }

    pub fn edge_length(&self, u: usize, v: usize) -> Option<f64> {
        let list = self.adjacency.get(u)?;
        list.binary_search_by_key(&v, |&(w, _)| w)
            .ok()
            .map(|i| list[i].1)
    }

    /// Edges as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (u, list) in self.adjacency.iter().enumerate() {
            for &(v, _) in list {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        dijkstra(self, 0).iter().all(|d| d.is_finite())
    }

    pub fn bearing(&self, from: usize, to: usize) -> f64 {
        bearing(self.positions[from], self.positions[to])
    }

    pub fn observe(&self, at: usize, heading: f64) -> Result<Observation> {
        if !self.contains(at) {
            return Err(Error::UnknownNode(at));
        }
        let candidates = self.adjacency[at]
            .iter()
            .map(|&(w, _)| Candidate {
                node: w,
                landmark: self.landmarks[w],
                angle: normalize_degrees(self.bearing(at, w) - heading),
            })
            .collect();
        Ok(Observation {
            at,
            heading: normalize_degrees(heading),
            candidates,
        })
    }

    pub fn shortest_path(&self, from: usize, to: usize) -> Result<(Vec<usize>, f64)> {
        shortest_path_in(self, from, to)
    }

    /// All-pairs geodesic distances, computed once.
    pub fn geodesics(&self) -> &[Vec<f64>] {
        self.geodesics
            .get_or_init(|| (0..self.node_count()).map(|s| dijkstra(self, s)).collect())
    }

    pub fn geodesic_distance(&self, a: usize, b: usize) -> Result<f64> {
        if !self.contains(a) {
            return Err(Error::UnknownNode(a));
        }
        if !self.contains(b) {
            return Err(Error::UnknownNode(b));
        }
        let d = self.geodesics()[a][b];
        if d.is_finite() {
            Ok(d)
        } else {
            Err(Error::Disconnected { from: a, to: b })
        }
    }

    pub fn max_landmark(&self) -> usize {
        self.landmarks.iter().copied().max().unwrap_or(0)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = EnvFile {
            nodes: (0..self.node_count())
                .map(|i| NodeRecord {
                    id: i,
                    x: self.positions[i][0],
                    y: self.positions[i][1],
                    landmark: self.landmarks[i],
                })
                .collect(),
            edges: self.edges().into_iter().map(|(u, v)| [u, v]).collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Parses the environment JSON. Node ids must be exactly `0..n` (any order).
    pub fn from_json(id: impl Into<String>, text: &str) -> Result<Self> {
        let file: EnvFile = serde_json::from_str(text)?;
        let n = file.nodes.len();
        let mut positions = vec![None; n];
        let mut landmarks = vec![0; n];
        for rec in &file.nodes {
            if rec.id >= n || positions[rec.id].is_some() {
                return Err(Error::Invalid(format!(
                    "node ids must be unique and dense in 0..{n}; got {}",
                    rec.id
                )));
            }
            positions[rec.id] = Some([rec.x, rec.y]);
            landmarks[rec.id] = rec.landmark;
        }
        let positions = positions.into_iter().map(|p| p.expect("all ids seen")).collect();
        let edges: Vec<(usize, usize)> = file.edges.iter().map(|e| (e[0], e[1])).collect();
        Self::new(id, positions, landmarks, &edges)
    }

    /// Loads a world; its id is the file stem.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::from_json(id, &text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Parameters of the random geometric world generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvGenParams {
    pub node_count: usize,
    /// Connection radius in meters.
    pub radius: f64,
    pub landmark_vocab: usize,
    /// Side of the square in meters; `None` means `2·√node_count`.
    #[serde(default)]
    pub side: Option<f64>,
}

impl EnvGenParams {
    pub fn side(&self) -> f64 {
        self.side.unwrap_or(2.0 * (self.node_count as f64).sqrt())
    }
}

/// Random geometric graph with uniform positions in a square and an edge for
/// every pair within `radius`; remaining components are joined by repeatedly
/// adding the globally shortest edge between two different components.
pub fn generate_env(id: impl Into<String>, rng: &mut ChaCha8Rng, params: &EnvGenParams) -> Result<EnvGraph> {
    let n = params.node_count;
    if n < 2 {
        return Err(Error::Config(format!("node_count must be >= 2, got {n}")));
    }
    if !(params.radius > 0.0) {
        return Err(Error::Config(format!("radius must be > 0, got {}", params.radius)));
    }
    if params.landmark_vocab == 0 {
        return Err(Error::Config("landmark_vocab must be >= 1".into()));
    }
    let side = params.side();
    let positions: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.gen_range(0.0..side), rng.gen_range(0.0..side)])
        .collect();
    let landmarks: Vec<usize> = (0..n).map(|_| rng.gen_range(0..params.landmark_vocab)).collect();

    let mut edges = Vec::new();
    let mut comp: Vec<usize> = (0..n).collect();
    fn find(comp: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while comp[r] != r {
            r = comp[r];
        }
        let mut c = x;
        while comp[c] != r {
            let next = comp[c];
            comp[c] = r;
            c = next;
        }
        r
    }
    for u in 0..n {
        for v in u + 1..n {
            if euclidean(positions[u], positions[v]) <= params.radius {
                edges.push((u, v));
                let (a, b) = (find(&mut comp, u), find(&mut comp, v));
                if a != b {
                    comp[a.max(b)] = a.min(b);
                }
            }
        }
    }
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for u in 0..n {
            for v in u + 1..n {
                if find(&mut comp, u) == find(&mut comp, v) {
                    continue;
                }
                let d = euclidean(positions[u], positions[v]);
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, u, v));
                }
            }
        }
        let Some((_, u, v)) = best else { break };
        edges.push((u, v));
        let (a, b) = (find(&mut comp, u), find(&mut comp, v));
        comp[a.max(b)] = a.min(b);
    }
    EnvGraph::new(id, positions, landmarks, &edges)
}

/// One instruction-following task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Episode {
    pub id: String,
    pub env_id: String,
    pub instruction: Vec<usize>,
    #[serde(default)]
    pub instruction_text: Option<String>,
    pub start: usize,
    pub goal: usize,
    pub path: Vec<usize>,
}

impl Episode {
    pub fn hops(&self) -> usize {
        self.path.len().saturating_sub(1)
    }

    pub fn text(&self) -> String {
        self.instruction_text
            .clone()
            .unwrap_or_else(|| self.instruction.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" "))
    }

    pub fn validate(&self, env: &EnvGraph, vocab: &Vocabulary) -> Result<()> {
        if self.path.first() != Some(&self.start) || self.path.last() != Some(&self.goal) {
            return Err(Error::Invalid(format!(
                "episode {}: path must run from start to goal",
                self.id
            )));
        }
        for w in self.path.windows(2) {
            if env.edge_length(w[0], w[1]).is_none() {
                return Err(Error::Invalid(format!(
                    "episode {}: {}-{} is not an edge",
                    self.id, w[0], w[1]
                )));
            }
        }
        if self.instruction.is_empty() {
            return Err(Error::EmptyInput("instruction"));
        }
        for &t in &self.instruction {
            vocab.decode(t)?;
        }
        Ok(())
    }
}

/// Instruction tokens for a path: per hop, the direction token of the turn
/// (relative to the heading on arrival at the previous node) followed by the
/// landmark token of the node reached.
pub fn synthesize_instruction(env: &EnvGraph, path: &[usize], vocab: &Vocabulary) -> Vec<usize> {
    let mut heading = START_HEADING;
    let mut tokens = Vec::with_capacity(2 * path.len().saturating_sub(1));
    for w in path.windows(2) {
        let b = env.bearing(w[0], w[1]);
        tokens.push(vocab.direction_token(Direction::from_angle(b - heading)));
        tokens.push(vocab.landmark_token(env.landmark(w[1])));
        heading = b;
    }
    tokens
}

pub fn instruction_text(tokens: &[usize], vocab: &Vocabulary) -> String {
    let mut parts = Vec::new();
    for pair in tokens.chunks(2) {
        let dir = match vocab.decode(pair[0]) {
            Ok(Token::Direction(d)) => d.word().to_string(),
            _ => "ahead".to_string(),
        };
        let lm = match pair.get(1).map(|&t| vocab.decode(t)) {
            Some(Ok(Token::Landmark(l))) => format!(" toward landmark {l}"),
            _ => String::new(),
        };
        parts.push(format!("{dir}{lm}"));
    }
    format!("Go {} and stop.", parts.join(", then "))
}

/// Samples `count` episodes whose shortest-path hop count lies in
/// `[min_hops, max_hops]`; the ground-truth path is the shortest path.
pub fn generate_episodes(
    env: &EnvGraph,
    rng: &mut ChaCha8Rng,
    count: usize,
    min_hops: usize,
    max_hops: usize,
    vocab: &Vocabulary,
) -> Result<Vec<Episode>> {
    if min_hops < 1 || max_hops < min_hops {
        return Err(Error::Config(format!(
            "need 1 <= min_hops <= max_hops, got {min_hops}..{max_hops}"
        )));
    }
    if env.max_landmark() >= vocab.landmarks {
        return Err(Error::Vocab {
            token: vocab.landmark_token(env.max_landmark()),
            size: vocab.size(),
        });
    }
    let n = env.node_count();
    let mut paths_from: Vec<Option<Vec<Vec<usize>>>> = vec![None; n];
    let attempt_budget = 100 * count.max(1) + 1000;
    let mut attempts = 0;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        if attempts >= attempt_budget {
            return Err(Error::GenerationExhausted { attempts });
        }
        attempts += 1;
        let start = rng.gen_range(0..n);
        let paths = paths_from[start].get_or_insert_with(|| {
            (0..n)
                .map(|g| env.shortest_path(start, g).map(|(p, _)| p).unwrap_or_default())
                .collect()
        });
        let feasible: Vec<&Vec<usize>> = paths
            .iter()
            .filter(|p| {
                let hops = p.len().saturating_sub(1);
                hops >= min_hops && hops <= max_hops
            })
            .collect();
        let Some(path) = feasible.choose(rng) else { continue };
        let path = (*path).clone();
        let instruction = synthesize_instruction(env, &path, vocab);
        out.push(Episode {
            id: format!("{}-{:04}", env.id(), out.len()),
            env_id: env.id().to_string(),
            instruction_text: Some(instruction_text(&instruction, vocab)),
            instruction,
            start: path[0],
            goal: *path.last().expect("non-empty"),
            path,
        });
    }
    Ok(out)
}

pub fn save_episodes(path: &Path, episodes: &[Episode]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for ep in episodes {
        serde_json::to_writer(&mut f, ep)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn load_episodes(path: &Path) -> Result<Vec<Episode>> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn triangle() -> EnvGraph {
        let positions = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]];
        EnvGraph::new("tri", positions, vec![0, 1, 2], &[(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    #[test]
    fn shortest_path_weighted_triangle() {
        let g = WeightedAdjacency::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 3.0)]);
        assert_eq!(shortest_path_in(&g, 0, 2).unwrap(), (vec![0, 1, 2], 2.0));
        assert_eq!(shortest_path_in(&g, 2, 2).unwrap(), (vec![2], 0.0));
        let split = WeightedAdjacency::from_edges(3, &[(0, 1, 1.0)]);
        assert!(matches!(shortest_path_in(&split, 0, 2), Err(Error::Disconnected { .. })));
    }

    #[test]
    fn shortest_path_triangle() {
        // A-B 1, B-C 1, A-C sqrt(2): the direct edge wins here.
        let env = triangle();
        let (p, l) = env.shortest_path(0, 2).unwrap();
        assert_eq!(p, vec![0, 2]);
        assert!((l - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(env.shortest_path(1, 1).unwrap(), (vec![1], 0.0));
    }

    #[test]
    fn shortest_path_prefers_two_short_hops() {
        // A(0,0) B(1,0) C(2,0.0001)... the detour via a far node is longer.
        let positions = vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [1.0, 1.4]];
        let env = EnvGraph::new("line", positions, vec![0; 4], &[(0, 1), (1, 2), (0, 3), (3, 2)]).unwrap();
        let (p, l) = env.shortest_path(0, 2).unwrap();
        assert_eq!(p, vec![0, 1, 2]);
        assert!((l - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lexicographic_tie_break() {
        // Square: 0 -> 3 via 1 or via 2, both length 2.
        let positions = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let env = EnvGraph::new("sq", positions, vec![0; 4], &[(0, 2), (2, 3), (0, 1), (1, 3)]).unwrap();
        assert_eq!(env.shortest_path(0, 3).unwrap().0, vec![0, 1, 3]);
        assert_eq!(env.shortest_path(3, 0).unwrap().0, vec![3, 1, 0]);
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let err = EnvGraph::new("d", vec![[0.0, 0.0], [1.0, 0.0]], vec![0, 0], &[]);
        assert!(err.is_err());
    }

    #[test]
    fn observe_angles() {
        let env = EnvGraph::new(
            "o",
            vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]],
            vec![3, 4, 5],
            &[(0, 1), (0, 2)],
        )
        .unwrap();
        let obs = env.observe(0, 0.0).unwrap();
        assert_eq!(obs.candidates.len(), 2);
        assert_eq!(obs.candidates[0].angle, 0.0);
        assert!((obs.candidates[1].angle - 90.0).abs() < 1e-12);
        assert_eq!(obs.candidates[1].landmark, 5);
        let obs = env.observe(0, 90.0).unwrap();
        assert!(obs.candidates[1].angle.abs() < 1e-12);
        assert!((obs.candidates[0].angle - 270.0).abs() < 1e-12);
    }

    #[test]
    fn direction_bins() {
        assert_eq!(Direction::from_angle(0.0), Direction::Front);
        assert_eq!(Direction::from_angle(314.9), Direction::Left);
        assert_eq!(Direction::from_angle(315.0), Direction::Front);
        assert_eq!(Direction::from_angle(44.9), Direction::Front);
        assert_eq!(Direction::from_angle(45.0), Direction::Right);
        assert_eq!(Direction::from_angle(90.0), Direction::Right);
        assert_eq!(Direction::from_angle(135.0), Direction::Rear);
        assert_eq!(Direction::from_angle(225.0), Direction::Left);
    }

    #[test]
    fn two_node_world_has_one_edge() {
        for seed in 0..20 {
            let mut r = rng::substream(seed, rng::ENV_GEN, 0);
            let p = EnvGenParams {
                node_count: 2,
                radius: 0.01,
                landmark_vocab: 4,
                side: None,
            };
            let env = generate_env("two", &mut r, &p).unwrap();
            assert_eq!(env.edges(), vec![(0, 1)]);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let p = EnvGenParams {
            node_count: 25,
            radius: 2.0,
            landmark_vocab: 10,
            side: None,
        };
        let a = generate_env("x", &mut rng::stream(9, rng::ENV_GEN), &p).unwrap();
        let b = generate_env("x", &mut rng::stream(9, rng::ENV_GEN), &p).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let back = EnvGraph::from_json("x", &a.to_json().unwrap()).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn env_json_rejects_unknown_fields_and_bad_ids() {
        let bad = r#"{"nodes":[{"id":0,"x":0,"y":0,"landmark":0,"z":1}],"edges":[]}"#;
        assert!(EnvGraph::from_json("b", bad).is_err());
        let dup = r#"{"nodes":[{"id":0,"x":0,"y":0,"landmark":0},{"id":0,"x":1,"y":0,"landmark":0}],"edges":[[0,1]]}"#;
        assert!(EnvGraph::from_json("b", dup).is_err());
    }

    fn gen_world(seed: u64) -> EnvGraph {
        let p = EnvGenParams {
            node_count: 30,
            radius: 2.5,
            landmark_vocab: 16,
            side: None,
        };
        generate_env(format!("w{seed}"), &mut rng::substream(seed, rng::ENV_GEN, 0), &p).unwrap()
    }

    #[test]
    fn single_hop_episodes() {
        let env = gen_world(3);
        let vocab = Vocabulary::new(16);
        let eps = generate_episodes(&env, &mut rng::stream(1, rng::EPISODE_GEN), 20, 1, 1, &vocab).unwrap();
        for ep in &eps {
            assert_eq!(ep.path.len(), 2);
            assert_eq!(ep.instruction.len(), 2);
            ep.validate(&env, &vocab).unwrap();
        }
    }

    #[test]
    fn instruction_decodes_to_path_landmarks() {
        let env = gen_world(4);
        let vocab = Vocabulary::new(16);
        let eps = generate_episodes(&env, &mut rng::stream(2, rng::EPISODE_GEN), 50, 2, 6, &vocab).unwrap();
        for ep in &eps {
            assert_eq!(ep.instruction.len(), 2 * ep.hops());
            let decoded: Vec<usize> = ep
                .instruction
                .iter()
                .filter_map(|&t| match vocab.decode(t).unwrap() {
                    Token::Landmark(l) => Some(l),
                    Token::Direction(_) => None,
                })
                .collect();
            let expected: Vec<usize> = ep.path[1..].iter().map(|&n| env.landmark(n)).collect();
            assert_eq!(decoded, expected);
            let hops = ep.hops();
            assert!((2..=6).contains(&hops));
            // ground truth is a shortest path
            let (_, l) = env.shortest_path(ep.start, ep.goal).unwrap();
            let gl: f64 = ep.path.windows(2).map(|w| env.edge_length(w[0], w[1]).unwrap()).sum();
            assert!((gl - l).abs() < 1e-9);
        }
    }

    #[test]
    fn infeasible_hops_exhaust() {
        let env = triangle();
        let vocab = Vocabulary::new(4);
        let err = generate_episodes(&env, &mut rng::stream(0, rng::EPISODE_GEN), 1, 5, 6, &vocab).unwrap_err();
        assert!(matches!(err, Error::GenerationExhausted { .. }));
    }

    #[test]
    fn episodes_are_deterministic_and_roundtrip() {
        let env = gen_world(5);
        let vocab = Vocabulary::new(16);
        let a = generate_episodes(&env, &mut rng::stream(7, rng::EPISODE_GEN), 10, 1, 4, &vocab).unwrap();
        let b = generate_episodes(&env, &mut rng::stream(7, rng::EPISODE_GEN), 10, 1, 4, &vocab).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("eps.jsonl");
        save_episodes(&p, &a).unwrap();
        assert_eq!(load_episodes(&p).unwrap(), a);
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 10);
    }
}
