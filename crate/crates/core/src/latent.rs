//! Latent provider: turns candidate views plus an instruction into one merged
//! latent per view (and per-token instruction latents) through a small
//! query encoder and a joint sequence encoder.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::config::LatentConfig;
use crate::env::{Candidate, Direction, Vocabulary};
use crate::error::{Error, Result};
use crate::nn::{Attention, EncoderLayer, FeedForward, LayerNorm, Linear, ParamBuilder, ParamId, ParamStore, Session};
use crate::tensor::Tensor;

/// A view as the provider sees it: landmark id and relative-angle bin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ViewKey {
    pub landmark: usize,
    pub bin: usize,
}

impl ViewKey {
    pub fn of(c: &Candidate) -> Self {
        Self {
            landmark: c.landmark,
            bin: c.direction().index(),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct QueryLayer {
    joint: EncoderLayer,
    cross: Attention,
    cross_norm: LayerNorm,
    ffn: FeedForward,
    ffn_norm: LayerNorm,
}

/// Parameter handles of the provider; values live in a [`ParamStore`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatentProvider {
    cfg: LatentConfig,
    vocab: Vocabulary,
    landmark_table: ParamId,
    angle_table: ParamId,
    queries: ParamId,
    query_tokens: ParamId,
    query_layers: Vec<QueryLayer>,
    projection: Linear,
    lm_tokens: ParamId,
    lm_layers: Vec<EncoderLayer>,
    merge: FeedForward,
}

/// Output of the query encoder for one view.
pub struct QueryOutput {
    /// `[num_queries × d_q]`
    pub queries: Var,
    /// `[num_queries × d_lm]`
    pub image_tokens: Var,
}

/// Output of the joint encoder for one observation.
pub struct EncodedObservation {
    /// `[L × d_lm]` instruction latents.
    pub instruction: Var,
    /// Per view, `[num_queries × d_lm]` output tokens.
    pub view_tokens: Vec<Var>,
    /// Per view, `[1 × d_lm]` merged latent.
    pub merged: Vec<Var>,
}

impl LatentProvider {
    pub fn new(cfg: &LatentConfig, vocab: Vocabulary, store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str) -> Self {
        let mut b = ParamBuilder::new(store, rng, prefix, cfg.trainable).with_gain(cfg.init_gain);
        let (dv, dq, dl, h) = (cfg.d_v, cfg.d_q, cfg.d_lm, cfg.heads);
        let landmark_table = b.embedding("view.landmark", vocab.landmarks, dv);
        let angle_table = b.embedding("view.angle", Direction::ALL.len(), dv);
        let queries = b.embedding("qformer.queries", cfg.num_queries, dq);
        let query_tokens = b.embedding("qformer.tokens", vocab.size(), dq);
        let query_layers = (0..cfg.qformer_depth.max(1))
            .map(|i| QueryLayer {
                joint: b.encoder_layer(&format!("qformer.{i}.joint"), dq, dq * cfg.ffn_mult, h),
                cross: b.attention(&format!("qformer.{i}.cross"), dq, dv, dq, h),
                cross_norm: b.layer_norm(&format!("qformer.{i}.cross_norm"), dq),
                ffn: b.feed_forward(&format!("qformer.{i}.ffn"), dq, dq * cfg.ffn_mult),
                ffn_norm: b.layer_norm(&format!("qformer.{i}.ffn_norm"), dq),
            })
            .collect();
        let projection = b.linear("qformer.projection", dq, dl, false);
        let lm_tokens = b.embedding("lm.tokens", vocab.size(), dl);
        let lm_layers = (0..cfg.encoder_depth)
            .map(|i| b.encoder_layer(&format!("lm.{i}"), dl, dl * cfg.ffn_mult, h))
            .collect();
        let merge = b.feed_forward("merge", dl, dl * cfg.ffn_mult);
        Self {
            cfg: cfg.clone(),
            vocab,
            landmark_table,
            angle_table,
            queries,
            query_tokens,
            query_layers,
            projection,
            lm_tokens,
            lm_layers,
            merge,
        }
    }

    pub fn config(&self) -> &LatentConfig {
        &self.cfg
    }

    pub fn vocabulary(&self) -> Vocabulary {
        self.vocab
    }

    /// `[1 × d_v]` feature for a landmark seen at a relative angle.
    pub fn featurize_view(&self, s: &Session, landmark: usize, angle: f64) -> Result<Var> {
        self.featurize_key(
            s,
            ViewKey {
                landmark,
                bin: Direction::from_angle(angle).index(),
            },
        )
    }

    fn featurize_key(&self, s: &Session, key: ViewKey) -> Result<Var> {
        let t = s.tape();
        let l = t.gather_rows(s.param(self.landmark_table), &[key.landmark])?;
        let a = t.gather_rows(s.param(self.angle_table), &[key.bin])?;
        t.add(l, a)
    }

    fn check_instruction(&self, instruction: &[usize]) -> Result<()> {
        if instruction.is_empty() {
            return Err(Error::EmptyInput("instruction"));
        }
        if let Some(&bad) = instruction.iter().find(|&&x| x >= self.vocab.size()) {
            return Err(Error::Vocab {
                token: bad,
                size: self.vocab.size(),
            });
        }
        Ok(())
    }

    fn query_layer(&self, s: &Session, layer: &QueryLayer, q: Var, instr: Var, view: Var) -> Result<Var> {
        let t = s.tape();
        let joint = t.concat_rows(&[q, instr])?;
        let joint = layer.joint.forward(s, joint, None, None)?;
        let q = t.slice_rows(joint, 0, self.cfg.num_queries)?;
        let c = layer.cross.forward(s, q, view, None, None)?;
        let q = layer.cross_norm.forward(s, t.add(q, c)?)?;
        let f = layer.ffn.forward(s, q)?;
        layer.ffn_norm.forward(s, t.add(q, f)?)
    }

    /// Learned queries attend jointly with the instruction, then to the view
    /// feature; the result is projected into the language latent space.
    pub fn qformer_encode(&self, s: &Session, view: Var, instruction: &[usize]) -> Result<QueryOutput> {
        self.check_instruction(instruction)?;
        let t = s.tape();
        let instr = t.gather_rows(s.param(self.query_tokens), instruction)?;
        let mut q = s.param(self.queries);
        for layer in &self.query_layers {
            q = self.query_layer(s, layer, q, instr, view)?;
        }
        let image_tokens = self.projection.forward(s, q)?;
        Ok(QueryOutput {
            queries: q,
            image_tokens,
        })
    }

    /// Joint encoder over `[instruction ‖ image tokens of every view]`; the
    /// outputs are split back per view and merged to one vector each.
    pub fn lm_encode(&self, s: &Session, image_tokens: &[Var], instruction: &[usize]) -> Result<EncodedObservation> {
        self.check_instruction(instruction)?;
        if image_tokens.is_empty() {
            return Err(Error::EmptyInput("image tokens"));
        }
        let t = s.tape();
        let nq = self.cfg.num_queries;
        let l = instruction.len();
        let len = l + nq * image_tokens.len();
        if len > self.cfg.max_len {
            return Err(Error::SequenceTooLong {
                len,
                max: self.cfg.max_len,
            });
        }
        let mut parts = vec![t.gather_rows(s.param(self.lm_tokens), instruction)?];
        parts.extend_from_slice(image_tokens);
        let mut x = t.concat_rows(&parts)?;
        if self.cfg.positional {
            x = t.add(x, t.constant(sinusoidal(len, self.cfg.d_lm)))?;
        }
        let mask = self.cfg.causal.then(|| causal_mask(len));
        for layer in &self.lm_layers {
            x = layer.forward(s, x, None, mask.as_deref())?;
        }
        let instruction_latents = t.slice_rows(x, 0, l)?;
        let mut view_tokens = Vec::with_capacity(image_tokens.len());
        let mut merged = Vec::with_capacity(image_tokens.len());
        for i in 0..image_tokens.len() {
            let v = t.slice_rows(x, l + i * nq, nq)?;
            merged.push(self.merge.forward(s, t.mean_rows(v))?);
            view_tokens.push(v);
        }
        Ok(EncodedObservation {
            instruction: instruction_latents,
            view_tokens,
            merged,
        })
    }

    /// Full pipeline for an ordered list of views.
    pub fn encode_views(&self, s: &Session, views: &[ViewKey], instruction: &[usize]) -> Result<EncodedObservation> {
        let mut tokens = Vec::with_capacity(views.len());
        for &v in views {
            let f = self.featurize_key(s, v)?;
            tokens.push(self.qformer_encode(s, f, instruction)?.image_tokens);
        }
        self.lm_encode(s, &tokens, instruction)
    }
}

/// Standard sine/cosine position table `[len × d]`.
pub fn sinusoidal(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = pos as f64 * freq;
            data[pos * d + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    Tensor::matrix(len, d, data).expect("valid shape")
}

fn causal_mask(len: usize) -> Vec<bool> {
    (0..len * len).map(|k| k % len <= k / len).collect()
}

/// Detached latents for one observation.
#[derive(Clone, Debug)]
pub struct CachedLatents {
    pub instruction: Tensor,
    pub merged: Vec<Tensor>,
}

type CacheKey = (Vec<usize>, Vec<ViewKey>);

/// Memo of frozen-provider outputs keyed by instruction and ordered views.
/// Only valid while the provider parameters do not change.
#[derive(Default)]
pub struct LatentCache {
    map: Mutex<HashMap<CacheKey, Arc<CachedLatents>>>,
}

impl LatentCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.map.lock().expect("cache lock").clear();
    }

    pub fn get_or_compute(
        &self,
        provider: &LatentProvider,
        store: &ParamStore,
        views: &[ViewKey],
        instruction: &[usize],
    ) -> Result<Arc<CachedLatents>> {
        let key = (instruction.to_vec(), views.to_vec());
        if let Some(hit) = self.map.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let s = Session::new(store, false);
        let enc = provider.encode_views(&s, views, instruction)?;
        let t = s.tape();
        let value = Arc::new(CachedLatents {
            instruction: t.value(enc.instruction).clone(),
            merged: enc.merged.iter().map(|&v| t.value(v).clone()).collect(),
        });
        self.map
            .lock()
            .expect("cache lock")
            .entry(key)
            .or_insert(value.clone());
        Ok(value)
    }
}
