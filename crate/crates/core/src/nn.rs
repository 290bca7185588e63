//! Parameter storage and the dense building blocks shared by the latent
//! provider and the policy: linear maps, layer norm, (multi-head) scaled
//! dot-product attention with an optional additive bias, feed-forward and
//! encoder sublayers.
//!
//! Linear layers are initialised uniform(−g/√d_in, g/√d_in) for both weight
//! and bias with gain `g` (1 unless set); embedding tables uniform(−1, 1);
//! layer norms gain 1 / shift 0.

use std::cell::RefCell;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Flat, ordered collection of named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            value,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry {
        &mut self.entries[id.0]
    }

    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for e in self.entries.iter_mut().filter(|e| e.name.starts_with(prefix)) {
            e.trainable = trainable;
        }
    }

    /// Total scalar parameter count.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn trainable_scalar_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }
}

/// Helper that allocates initialised parameters under a name prefix.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
    trainable: bool,
    gain: f64,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng, prefix: &str, trainable: bool) -> Self {
        Self {
            store,
            rng,
            prefix: prefix.to_string(),
            trainable,
            gain: 1.0,
        }
    }

    /// Scales the bound of every subsequent linear initialisation.
    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }

    fn name(&self, local: &str) -> String {
        format!("{}.{}", self.prefix, local)
    }

    fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        Tensor::new(shape.to_vec(), data).expect("valid init shape")
    }

    pub fn tensor(&mut self, local: &str, value: Tensor) -> ParamId {
        let name = self.name(local);
        self.store.add(name, value, self.trainable)
    }

    pub fn linear(&mut self, local: &str, d_in: usize, d_out: usize, bias: bool) -> Linear {
        let bound = self.gain / (d_in as f64).sqrt();
        let w = self.uniform(&[d_in, d_out], bound);
        let weight = self.tensor(&format!("{local}.weight"), w);
        let bias = bias.then(|| {
            let b = self.uniform(&[d_out], bound);
            self.tensor(&format!("{local}.bias"), b)
        });
        Linear { weight, bias }
    }

    pub fn embedding(&mut self, local: &str, rows: usize, dim: usize) -> ParamId {
        let t = self.uniform(&[rows, dim], 1.0);
        self.tensor(local, t)
    }

    pub fn layer_norm(&mut self, local: &str, d: usize) -> LayerNorm {
        let gain = self.tensor(&format!("{local}.gain"), Tensor::full(&[d], 1.0));
        let shift = self.tensor(&format!("{local}.shift"), Tensor::zeros(&[d]));
        LayerNorm { gain, shift }
    }

    pub fn scalar(&mut self, local: &str, value: f64) -> ParamId {
        self.tensor(local, Tensor::scalar(value))
    }

    pub fn attention(&mut self, local: &str, d_query: usize, d_kv: usize, d_model: usize, heads: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{local}.q"), d_query, d_model, true),
            k: self.linear(&format!("{local}.k"), d_kv, d_model, true),
            v: self.linear(&format!("{local}.v"), d_kv, d_model, true),
            o: self.linear(&format!("{local}.o"), d_model, d_query, true),
            heads,
        }
    }

    pub fn feed_forward(&mut self, local: &str, d: usize, hidden: usize) -> FeedForward {
        FeedForward {
            up: self.linear(&format!("{local}.up"), d, hidden, true),
            down: self.linear(&format!("{local}.down"), hidden, d, true),
        }
    }

    pub fn encoder_layer(&mut self, local: &str, d: usize, hidden: usize, heads: usize) -> EncoderLayer {
        EncoderLayer {
            attn: self.attention(&format!("{local}.attn"), d, d, d, heads),
            norm1: self.layer_norm(&format!("{local}.norm1"), d),
            ffn: self.feed_forward(&format!("{local}.ffn"), d, hidden),
            norm2: self.layer_norm(&format!("{local}.norm2"), d),
        }
    }
}

/// A forward pass bound to one [`ParamStore`]: parameters are placed on the
/// tape lazily, once each.
pub struct Session<'s> {
    tape: Tape,
    store: &'s ParamStore,
    bound: RefCell<Vec<Option<Var>>>,
    track: bool,
}

impl<'s> Session<'s> {
    /// `track = false` gives an inference-only pass: nothing is recorded.
    pub fn new(store: &'s ParamStore, track: bool) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: RefCell::new(vec![None; store.len()]),
            track,
        }
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn tracking(&self) -> bool {
        self.track
    }

    pub fn param(&self, id: ParamId) -> Var {
        if let Some(v) = self.bound.borrow()[id.0] {
            return v;
        }
        let entry = &self.store.entries[id.0];
        let v = self
            .tape
            .leaf(entry.value.clone(), self.track && entry.trainable);
        self.bound.borrow_mut()[id.0] = Some(v);
        v
    }

    /// Backpropagates `loss` and returns gradients for every bound trainable
    /// parameter, aligned with the store.
    pub fn backward(&self, loss: Var) -> Result<ParamGrads> {
        let grads: Gradients = self.tape.backward(loss)?;
        let mut out = ParamGrads::zeros(self.store);
        for (i, slot) in self.bound.borrow().iter().enumerate() {
            if let Some(v) = slot {
                if let Some(g) = grads.get(*v) {
                    out.grads[i] = g.into_data();
                }
            }
        }
        Ok(out)
    }
}

/// Dense gradient buffers aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub grads: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros(store: &ParamStore) -> Self {
        Self {
            grads: store.entries.iter().map(|e| vec![0.0; e.value.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.grads.iter_mut().flatten().for_each(|g| *g *= c);
    }

    pub fn norm(&self) -> f64 {
        self.grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.is_finite())
    }
}

/// `x·weight + bias`.
pub fn linear(tape: &Tape, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
    let y = tape.matmul(x, weight)?;
    match bias {
        Some(b) => tape.add_row(y, b),
        None => Ok(y),
    }
}

/// `softmax(q·kᵀ/√d + bias, mask)·v`.
pub fn scaled_dot_attention(
    tape: &Tape,
    q: Var,
    k: Var,
    v: Var,
    bias: Option<Var>,
    mask: Option<&[bool]>,
) -> Result<Var> {
    let d = tape.value(q).cols();
    {
        let (tk, tv) = (tape.value(k), tape.value(v));
        if tk.cols() != d || tk.rows() != tv.rows() {
            return Err(Error::Shape {
                op: "attention",
                left: tk.shape().to_vec(),
                right: tv.shape().to_vec(),
            });
        }
    }
    let kt = tape.transpose(k);
    let logits = tape.matmul(q, kt)?;
    let mut logits = tape.scale(logits, 1.0 / (d as f64).sqrt());
    if let Some(b) = bias {
        logits = tape.add(logits, b)?;
    }
    let weights = tape.softmax(logits, mask)?;
    tape.matmul(weights, v)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn forward(&self, s: &Session, x: Var) -> Result<Var> {
        linear(s.tape(), x, s.param(self.weight), self.bias.map(|b| s.param(b)))
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn forward(&self, s: &Session, x: Var) -> Result<Var> {
        s.tape()
            .layer_norm(x, s.param(self.gain), s.param(self.shift), LN_EPS)
    }
}

/// Multi-head attention; heads split the projected width evenly.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn forward(
        &self,
        s: &Session,
        query: Var,
        context: Var,
        bias: Option<Var>,
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        let t = s.tape();
        let q = self.q.forward(s, query)?;
        let k = self.k.forward(s, context)?;
        let v = self.v.forward(s, context)?;
        let width = t.value(q).cols();
        if self.heads <= 1 {
            let a = scaled_dot_attention(t, q, k, v, bias, mask)?;
            return self.o.forward(s, a);
        }
        if !width.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model width {width} not divisible by {} heads",
                self.heads
            )));
        }
        let hw = width / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = t.slice_cols(q, h * hw, hw)?;
            let kh = t.slice_cols(k, h * hw, hw)?;
            let vh = t.slice_cols(v, h * hw, hw)?;
            outs.push(scaled_dot_attention(t, qh, kh, vh, bias, mask)?);
        }
        let cat = t.concat_cols(&outs)?;
        self.o.forward(s, cat)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn forward(&self, s: &Session, x: Var) -> Result<Var> {
        let h = self.up.forward(s, x)?;
        let h = s.tape().gelu(h);
        self.down.forward(s, h)
    }
}

/// Post-norm self-attention + feed-forward block.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EncoderLayer {
    pub attn: Attention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn forward(&self, s: &Session, x: Var, bias: Option<Var>, mask: Option<&[bool]>) -> Result<Var> {
        let t = s.tape();
        let a = self.attn.forward(s, x, x, bias, mask)?;
        let x = self.norm1.forward(s, t.add(x, a)?)?;
        let f = self.ffn.forward(s, x)?;
        self.norm2.forward(s, t.add(x, f)?)
    }
}
