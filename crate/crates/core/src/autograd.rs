//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every operation computes its value eagerly and, when at least one input
//! requires a gradient, records itself on the tape. Recorded operations only
//! reference earlier entries, so a single reverse sweep visits each one once.

use std::cell::{Ref, RefCell};

use crate::error::{Error, Result};
use crate::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    AddScalar(Var, Var),
    Gelu(Var),
    Softmax(Var),
    Nll { x: Var, target: usize, probs: Vec<f64> },
    LayerNorm { x: Var, gain: Var, shift: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Transpose(Var),
    MeanRows(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of operations for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<Tensor> {
        self.grads[var.0]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[var.0].clone(), g.clone()).expect("grad shape"))
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of entries that participate in the backward sweep.
    pub fn recorded_ops(&self) -> usize {
        self.nodes
            .borrow()
            .iter()
            .filter(|n| n.requires_grad && !matches!(n.op, Op::Leaf))
            .count()
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    fn push(&self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let (ta, tb) = (self.value(a), self.value(b));
            let (n, k, k2, m) = (ta.rows(), ta.cols(), tb.rows(), tb.cols());
            if k != k2 {
                return Err(shape_err("matmul", &ta, &tb));
            }
            let mut out = vec![0.0; n * m];
            matmul_into(ta.data(), tb.data(), &mut out, n, k, m);
            Tensor::matrix(n, m, out)?
        };
        Ok(self.push(out, self.any_grad(&[a, b]), Op::MatMul(a, b)))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let (ta, tb) = (self.value(a), self.value(b));
            if ta.rows() != tb.rows() || ta.cols() != tb.cols() {
                return Err(shape_err("add", &ta, &tb));
            }
            let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
            Tensor::matrix(ta.rows(), ta.cols(), data)?
        };
        Ok(self.push(out, self.any_grad(&[a, b]), Op::Add(a, b)))
    }

    /// Adds a length-`m` row to every row of an `n×m` matrix.
    pub fn add_row(&self, a: Var, row: Var) -> Result<Var> {
        let out = {
            let (ta, tr) = (self.value(a), self.value(row));
            if tr.rows() != 1 || tr.cols() != ta.cols() {
                return Err(shape_err("add_row", &ta, &tr));
            }
            let m = ta.cols();
            let data = ta
                .data()
                .iter()
                .enumerate()
                .map(|(i, x)| x + tr.data()[i % m])
                .collect();
            Tensor::matrix(ta.rows(), m, data)?
        };
        Ok(self.push(out, self.any_grad(&[a, row]), Op::AddRow(a, row)))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let (ta, tb) = (self.value(a), self.value(b));
            if ta.rows() != tb.rows() || ta.cols() != tb.cols() {
                return Err(shape_err("mul", &ta, &tb));
            }
            let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
            Tensor::matrix(ta.rows(), ta.cols(), data)?
        };
        Ok(self.push(out, self.any_grad(&[a, b]), Op::Mul(a, b)))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let out = {
            let ta = self.value(a);
            let data = ta.data().iter().map(|x| x * c).collect();
            Tensor::matrix(ta.rows(), ta.cols(), data).expect("same shape")
        };
        self.push(out, self.any_grad(&[a]), Op::Scale(a, c))
    }

    /// Multiplies every entry by a single-element tensor.
    pub fn mul_scalar(&self, a: Var, s: Var) -> Result<Var> {
        let out = {
            let (ta, ts) = (self.value(a), self.value(s));
            if ts.len() != 1 {
                return Err(shape_err("mul_scalar", &ta, &ts));
            }
            let c = ts.item();
            Tensor::matrix(ta.rows(), ta.cols(), ta.data().iter().map(|x| x * c).collect())?
        };
        Ok(self.push(out, self.any_grad(&[a, s]), Op::MulScalar(a, s)))
    }

    /// Adds a single-element tensor to every entry.
    pub fn add_scalar(&self, a: Var, s: Var) -> Result<Var> {
        let out = {
            let (ta, ts) = (self.value(a), self.value(s));
            if ts.len() != 1 {
                return Err(shape_err("add_scalar", &ta, &ts));
            }
            let c = ts.item();
            Tensor::matrix(ta.rows(), ta.cols(), ta.data().iter().map(|x| x + c).collect())?
        };
        Ok(self.push(out, self.any_grad(&[a, s]), Op::AddScalar(a, s)))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&self, a: Var) -> Var {
        let out = {
            let ta = self.value(a);
            let data = ta.data().iter().map(|&x| gelu(x)).collect();
            Tensor::matrix(ta.rows(), ta.cols(), data).expect("same shape")
        };
        self.push(out, self.any_grad(&[a]), Op::Gelu(a))
    }

    /// Row-wise softmax. `mask` (row-major, `true` = keep) zeroes entries exactly.
    pub fn softmax(&self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let out = {
            let tx = self.value(x);
            let (n, m) = (tx.rows(), tx.cols());
            if let Some(mask) = mask {
                if mask.len() != n * m {
                    return Err(Error::Shape {
                        op: "softmax mask",
                        left: tx.shape().to_vec(),
                        right: vec![mask.len()],
                    });
                }
            }
            let mut data = vec![0.0; n * m];
            for r in 0..n {
                let keep = |c: usize| mask.is_none_or(|mk| mk[r * m + c]);
                softmax_row(tx.row(r), &mut data[r * m..(r + 1) * m], keep)
                    .ok_or(Error::DegenerateMask { row: r })?;
            }
            Tensor::matrix(n, m, data)?
        };
        Ok(self.push(out, self.any_grad(&[x]), Op::Softmax(x)))
    }

    /// Negative log-likelihood of `target` under a masked softmax over all
    /// entries of `x` (treated as one flat distribution). Returns a 1×1 value.
    pub fn nll(&self, x: Var, mask: Option<&[bool]>, target: usize) -> Result<Var> {
        let (out, probs) = {
            let tx = self.value(x);
            let len = tx.len();
            if let Some(mask) = mask {
                if mask.len() != len {
                    return Err(Error::Shape {
                        op: "nll mask",
                        left: tx.shape().to_vec(),
                        right: vec![mask.len()],
                    });
                }
            }
            let keep = |c: usize| mask.is_none_or(|mk| mk[c]);
            if target >= len || !keep(target) {
                return Err(Error::Label(target));
            }
            let mut probs = vec![0.0; len];
            let max = softmax_row(tx.data(), &mut probs, keep).ok_or(Error::DegenerateMask { row: 0 })?;
            let log_z = max
                + tx
                    .data()
                    .iter()
                    .enumerate()
                    .filter(|(c, _)| keep(*c))
                    .map(|(_, v)| (v - max).exp())
                    .sum::<f64>()
                    .ln();
            (Tensor::scalar(log_z - tx.data()[target]), probs)
        };
        Ok(self.push(out, self.any_grad(&[x]), Op::Nll { x, target, probs }))
    }

    /// Row-wise layer normalization followed by an affine map.
    pub fn layer_norm(&self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let (out, xhat, inv_std) = {
            let (tx, tg, ts) = (self.value(x), self.value(gain), self.value(shift));
            let (n, d) = (tx.rows(), tx.cols());
            if tg.len() != d || ts.len() != d {
                return Err(shape_err("layer_norm", &tx, &tg));
            }
            let mut xhat = vec![0.0; n * d];
            let mut inv_std = vec![0.0; n];
            let mut out = vec![0.0; n * d];
            for r in 0..n {
                let row = tx.row(r);
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std[r] = is;
                for c in 0..d {
                    let h = (row[c] - mean) * is;
                    xhat[r * d + c] = h;
                    out[r * d + c] = h * tg.data()[c] + ts.data()[c];
                }
            }
            (Tensor::matrix(n, d, out)?, xhat, inv_std)
        };
        let op = Op::LayerNorm {
            x,
            gain,
            shift,
            xhat,
            inv_std,
        };
        Ok(self.push(out, self.any_grad(&[x, gain, shift]), op))
    }

    pub fn transpose(&self, a: Var) -> Var {
        let out = {
            let ta = self.value(a);
            let (n, m) = (ta.rows(), ta.cols());
            let mut data = vec![0.0; n * m];
            for r in 0..n {
                for c in 0..m {
                    data[c * n + r] = ta.data()[r * m + c];
                }
            }
            Tensor::matrix(m, n, data).expect("transpose shape")
        };
        self.push(out, self.any_grad(&[a]), Op::Transpose(a))
    }

    /// Column means: `n×m → 1×m`.
    pub fn mean_rows(&self, a: Var) -> Var {
        let out = {
            let ta = self.value(a);
            let (n, m) = (ta.rows(), ta.cols());
            let mut data = vec![0.0; m];
            for r in 0..n {
                for (o, v) in data.iter_mut().zip(ta.row(r)) {
                    *o += v;
                }
            }
            data.iter_mut().for_each(|v| *v /= n as f64);
            Tensor::matrix(1, m, data).expect("mean shape")
        };
        self.push(out, self.any_grad(&[a]), Op::MeanRows(a))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        let out = {
            let first = parts.first().ok_or(Error::EmptyInput("concat_rows"))?;
            let m = self.value(*first).cols();
            let mut data = Vec::new();
            let mut rows = 0;
            for p in parts {
                let t = self.value(*p);
                if t.cols() != m {
                    return Err(shape_err("concat_rows", &self.value(*first), &t));
                }
                rows += t.rows();
                data.extend_from_slice(t.data());
            }
            Tensor::matrix(rows, m, data)?
        };
        Ok(self.push(out, self.any_grad(parts), Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let out = {
            let first = parts.first().ok_or(Error::EmptyInput("concat_cols"))?;
            let n = self.value(*first).rows();
            let tensors: Vec<_> = parts.iter().map(|p| self.value(*p)).collect();
            if let Some(bad) = tensors.iter().find(|t| t.rows() != n) {
                return Err(shape_err("concat_cols", &tensors[0], bad));
            }
            let m: usize = tensors.iter().map(|t| t.cols()).sum();
            let mut data = Vec::with_capacity(n * m);
            for r in 0..n {
                for t in &tensors {
                    data.extend_from_slice(t.row(r));
                }
            }
            Tensor::matrix(n, m, data)?
        };
        Ok(self.push(out, self.any_grad(parts), Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let out = {
            let ta = self.value(a);
            if len == 0 || start + len > ta.rows() {
                return Err(Error::Shape {
                    op: "slice_rows",
                    left: ta.shape().to_vec(),
                    right: vec![start, len],
                });
            }
            let m = ta.cols();
            Tensor::matrix(len, m, ta.data()[start * m..(start + len) * m].to_vec())?
        };
        Ok(self.push(out, self.any_grad(&[a]), Op::SliceRows(a, start)))
    }

    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let out = {
            let ta = self.value(a);
            if len == 0 || start + len > ta.cols() {
                return Err(Error::Shape {
                    op: "slice_cols",
                    left: ta.shape().to_vec(),
                    right: vec![start, len],
                });
            }
            let mut data = Vec::with_capacity(ta.rows() * len);
            for r in 0..ta.rows() {
                data.extend_from_slice(&ta.row(r)[start..start + len]);
            }
            Tensor::matrix(ta.rows(), len, data)?
        };
        Ok(self.push(out, self.any_grad(&[a]), Op::SliceCols(a, start)))
    }

    /// Row lookup (embedding gather); repeated indices accumulate on backward.
    pub fn gather_rows(&self, table: Var, idx: &[usize]) -> Result<Var> {
        let out = {
            let tt = self.value(table);
            if idx.is_empty() {
                return Err(Error::EmptyInput("gather_rows"));
            }
            if let Some(&bad) = idx.iter().find(|&&i| i >= tt.rows()) {
                return Err(Error::Vocab {
                    token: bad,
                    size: tt.rows(),
                });
            }
            let mut data = Vec::with_capacity(idx.len() * tt.cols());
            for &i in idx {
                data.extend_from_slice(tt.row(i));
            }
            Tensor::matrix(idx.len(), tt.cols(), data)?
        };
        Ok(self.push(out, self.any_grad(&[table]), Op::GatherRows(table, idx.to_vec())))
    }

    pub fn sum(&self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(out, self.any_grad(&[a]), Op::Sum(a))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                left: nodes[loss.0].value.shape().to_vec(),
                right: vec![1],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let out = &node.value;
            let val = |v: Var| &nodes[v.0].value;
            let wants = |v: Var| nodes[v.0].requires_grad;
            let acc = |v: Var, delta: Vec<f64>, grads: &mut Vec<Option<Vec<f64>>>| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.iter_mut().zip(&delta).for_each(|(e, d)| *e += d),
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                    if wants(*a) {
                        let mut da = vec![0.0; n * k];
                        matmul_nt_into(&g, tb.data(), &mut da, n, m, k);
                        acc(*a, da, &mut grads);
                    }
                    if wants(*b) {
                        let mut db = vec![0.0; k * m];
                        matmul_tn_into(ta.data(), &g, &mut db, n, k, m);
                        acc(*b, db, &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g, &mut grads);
                }
                Op::AddRow(a, row) => {
                    let m = out.cols();
                    if wants(*row) {
                        let mut dr = vec![0.0; m];
                        for (i, gv) in g.iter().enumerate() {
                            dr[i % m] += gv;
                        }
                        acc(*row, dr, &mut grads);
                    }
                    acc(*a, g, &mut grads);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    if wants(*a) {
                        let da = g.iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                        acc(*a, da, &mut grads);
                    }
                    if wants(*b) {
                        let db = g.iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                        acc(*b, db, &mut grads);
                    }
                }
                Op::Scale(a, c) => {
                    acc(*a, g.iter().map(|x| x * c).collect(), &mut grads);
                }
                Op::MulScalar(a, s) => {
                    let (ta, c) = (val(*a), val(*s).item());
                    if wants(*s) {
                        let ds = g.iter().zip(ta.data()).map(|(x, y)| x * y).sum();
                        acc(*s, vec![ds], &mut grads);
                    }
                    acc(*a, g.iter().map(|x| x * c).collect(), &mut grads);
                }
                Op::AddScalar(a, s) => {
                    acc(*s, vec![g.iter().sum()], &mut grads);
                    acc(*a, g, &mut grads);
                }
                Op::Gelu(a) => {
                    let ta = val(*a);
                    let da = g.iter().zip(ta.data()).map(|(gv, &x)| gv * gelu_grad(x)).collect();
                    acc(*a, da, &mut grads);
                }
                Op::Softmax(x) => {
                    let (n, m) = (out.rows(), out.cols());
                    let mut dx = vec![0.0; n * m];
                    for r in 0..n {
                        let y = out.row(r);
                        let gr = &g[r * m..(r + 1) * m];
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..m {
                            dx[r * m + c] = y[c] * (gr[c] - dot);
                        }
                    }
                    acc(*x, dx, &mut grads);
                }
                Op::Nll { x, target, probs } => {
                    let gs = g[0];
                    let mut dx: Vec<f64> = probs.iter().map(|p| p * gs).collect();
                    dx[*target] -= gs;
                    acc(*x, dx, &mut grads);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    shift,
                    xhat,
                    inv_std,
                } => {
                    let (n, d) = (out.rows(), out.cols());
                    let tg = val(*gain);
                    if wants(*gain) {
                        let mut dg = vec![0.0; d];
                        for (i, gv) in g.iter().enumerate() {
                            dg[i % d] += gv * xhat[i];
                        }
                        acc(*gain, dg, &mut grads);
                    }
                    if wants(*shift) {
                        let mut ds = vec![0.0; d];
                        for (i, gv) in g.iter().enumerate() {
                            ds[i % d] += gv;
                        }
                        acc(*shift, ds, &mut grads);
                    }
                    if wants(*x) {
                        let mut dx = vec![0.0; n * d];
                        for r in 0..n {
                            let dxhat: Vec<f64> =
                                (0..d).map(|c| g[r * d + c] * tg.data()[c]).collect();
                            let xh = &xhat[r * d..(r + 1) * d];
                            let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                            let mean_dx =
                                dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                            for c in 0..d {
                                dx[r * d + c] = inv_std[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
                            }
                        }
                        acc(*x, dx, &mut grads);
                    }
                }
                Op::Transpose(a) => {
                    let (n, m) = (out.rows(), out.cols());
                    let mut da = vec![0.0; n * m];
                    for r in 0..n {
                        for c in 0..m {
                            da[c * n + r] = g[r * m + c];
                        }
                    }
                    acc(*a, da, &mut grads);
                }
                Op::MeanRows(a) => {
                    let ta = val(*a);
                    let n = ta.rows();
                    let da = (0..ta.len()).map(|i| g[i % ta.cols()] / n as f64).collect();
                    acc(*a, da, &mut grads);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = val(*p).len();
                        acc(*p, g[offset..offset + len].to_vec(), &mut grads);
                        offset += len;
                    }
                }
                Op::ConcatCols(parts) => {
                    let (n, m) = (out.rows(), out.cols());
                    let mut col = 0;
                    for p in parts {
                        let w = val(*p).cols();
                        if wants(*p) {
                            let mut dp = Vec::with_capacity(n * w);
                            for r in 0..n {
                                dp.extend_from_slice(&g[r * m + col..r * m + col + w]);
                            }
                            acc(*p, dp, &mut grads);
                        }
                        col += w;
                    }
                }
                Op::SliceRows(a, start) => {
                    let ta = val(*a);
                    let m = ta.cols();
                    let mut da = vec![0.0; ta.len()];
                    da[start * m..start * m + g.len()].copy_from_slice(&g);
                    acc(*a, da, &mut grads);
                }
                Op::SliceCols(a, start) => {
                    let ta = val(*a);
                    let (n, m, w) = (ta.rows(), ta.cols(), out.cols());
                    let mut da = vec![0.0; n * m];
                    for r in 0..n {
                        da[r * m + start..r * m + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                    }
                    acc(*a, da, &mut grads);
                }
                Op::GatherRows(table, idx) => {
                    let tt = val(*table);
                    let m = tt.cols();
                    let mut dt = vec![0.0; tt.len()];
                    for (r, &i) in idx.iter().enumerate() {
                        for c in 0..m {
                            dt[i * m + c] += g[r * m + c];
                        }
                    }
                    acc(*table, dt, &mut grads);
                }
                Op::Sum(a) => {
                    let len = val(*a).len();
                    acc(*a, vec![g[0]; len], &mut grads);
                }
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Stable masked softmax of one row; returns the row max, or `None` if every
/// entry is masked.
fn softmax_row(x: &[f64], out: &mut [f64], keep: impl Fn(usize) -> bool) -> Option<f64> {
    let max = x
        .iter()
        .enumerate()
        .filter(|(c, _)| keep(*c))
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let mut z = 0.0;
    for (c, (o, v)) in out.iter_mut().zip(x).enumerate() {
        *o = if keep(c) { (v - max).exp() } else { 0.0 };
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
    Some(max)
}
