use std::collections::HashMap;

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ragged index lists in compressed form: group `i` is
/// `indices[offsets[i]..offsets[i + 1]]`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Groups {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Groups {
    pub fn new() -> Self {
        Self { offsets: vec![0], indices: Vec::new() }
    }

    pub fn from_lists(lists: &[Vec<usize>]) -> Self {
        let mut g = Self::new();
        for l in lists {
            g.push(l.iter().copied());
        }
        g
    }

    pub fn push(&mut self, members: impl IntoIterator<Item = usize>) {
        self.indices.extend(members);
        self.offsets.push(self.indices.len());
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn group(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn total(&self) -> usize {
        self.indices.len()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.indices.iter().copied().max()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionMode {
    /// `softmax(q·k / sqrt(d_k))` weights.
    ScaledDot,
    /// Uniform `1/|group|` weights; queries and keys are ignored.
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<f64>),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    Softmax(Var, f64),
    Attention { q: Var, k: Var, v: Var, groups: Groups, mode: AttentionMode, scale: f64, weights: Vec<f64> },
    GaussianLogProb { mean: Var, log_std: Var, action: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients for every parameter of a [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads(Vec<Vec<f64>>);

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self(store.ids().map(|id| vec![0.0; store.get(id).len()]).collect())
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.0[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.0[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.0.iter().map(Vec::as_slice)
    }

    pub fn global_norm(&self) -> f64 {
        self.0.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().flatten().for_each(|g| *g *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|g| g.is_finite())
    }
}

/// Wengert list for reverse-mode differentiation.
///
/// Every operation appends one node whose inputs all have smaller indices, so
/// insertion order is a topological order and the backward sweep is a single
/// reverse pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension { op, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut value: Tensor, op: Op, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        value.tape_id = Some(id);
        value.grad = None;
        self.nodes.push(Node { value, op, requires_grad });
        Var(id)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` loss with respect to `v`, if reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    /// Attention weights of an attention node, aligned with its groups.
    pub fn attention_weights(&self, v: Var) -> Option<(&Groups, &[f64])> {
        match &self.nodes[v.0].op {
            Op::Attention { groups, weights, .. } => Some((groups, weights)),
            _ => None,
        }
    }

    /// A constant: no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A free variable whose gradient is recorded (used by gradient checks).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Places a parameter on the tape once; repeated calls return the same var.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param(id), true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(dim_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `x + b` with `b` (length `cols`) broadcast over the rows of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let (rows, cols) = tx.dims2();
        if tb.len() != cols {
            return Err(dim_err("add_bias", tx, tb));
        }
        let mut out = tx.data().to_vec();
        for r in 0..rows {
            for (o, bv) in out[r * cols..(r + 1) * cols].iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        let t = tx.with_shape_of(out);
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(t, Op::AddBias(x, b), rg))
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err(name, ta, tb));
        }
        let out = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = ta.with_shape_of(out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("minimum", a, b, f64::min, Op::Minimum(a, b))
    }

    /// Elementwise product with a constant of the same length.
    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Result<Var> {
        let ta = self.value(a);
        if ta.len() != c.len() {
            return Err(Error::Dimension { op: "mul_const", lhs: ta.shape().to_vec(), rhs: vec![c.len()] });
        }
        let out = ta.data().iter().zip(&c).map(|(x, y)| x * y).collect();
        let t = ta.with_shape_of(out);
        let rg = self.rg(a);
        Ok(self.push(t, Op::MulConst(a, c), rg))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let t = ta.with_shape_of(ta.data().iter().map(|x| f(*x)).collect());
        let rg = self.rg(a);
        self.push(t, op, rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Domain("mean of an empty tensor".into()));
        }
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(m), Op::Mean(a), rg))
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Domain("concat of zero tensors".into()))?;
        let rows = self.value(*first).dims2().0;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = self.value(*p).dims2();
            if r != rows {
                return Err(dim_err("concat_cols", self.value(*first), self.value(*p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for (p, w) in parts.iter().zip(&widths) {
            let src = self.value(*p).data();
            for r in 0..rows {
                out[r * total + off..r * total + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(Tensor::new(vec![rows, total], out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Row-wise softmax of `x / divisor`, stabilized by max subtraction.
    pub fn softmax(&mut self, x: Var, divisor: f64) -> Result<Var> {
        if !(divisor > 0.0) {
            return Err(Error::Domain(format!("softmax divisor must be > 0, got {divisor}")));
        }
        let t = self.value(x);
        let (rows, cols) = t.dims2();
        if cols == 0 || t.is_empty() {
            return Err(Error::Domain("softmax over an empty set".into()));
        }
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            softmax_into(&t.data()[r * cols..(r + 1) * cols], divisor, &mut out[r * cols..(r + 1) * cols]);
        }
        let t = t.with_shape_of(out);
        let rg = self.rg(x);
        Ok(self.push(t, Op::Softmax(x, divisor), rg))
    }

    /// Grouped single-head attention.
    ///
    /// Query row `i` attends over the key/value rows listed in group `i`:
    /// `out_i = sum_j w_ij v_j` with `w_i = softmax(q_i·k_j / sqrt(d_k))` in
    /// [`AttentionMode::ScaledDot`] or uniform weights in [`AttentionMode::Mean`].
    /// An empty group yields a zero output row.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, groups: Groups, mode: AttentionMode) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let (nq, dk) = tq.dims2();
        let (nk, dk2) = tk.dims2();
        let (nv, dv) = tv.dims2();
        if dk != dk2 {
            return Err(dim_err("attention(q,k)", tq, tk));
        }
        if nk != nv {
            return Err(dim_err("attention(k,v)", tk, tv));
        }
        if groups.len() != nq {
            return Err(Error::Dimension {
                op: "attention(groups)",
                lhs: tq.shape().to_vec(),
                rhs: vec![groups.len()],
            });
        }
        if let Some(mx) = groups.max_index() {
            if mx >= nk {
                return Err(Error::Domain(format!("attention group index {mx} out of range for {nk} keys")));
            }
        }
        let scale = 1.0 / (dk as f64).sqrt();
        let mut weights = vec![0.0; groups.total()];
        let mut out = vec![0.0; nq * dv];
        let mut logits = Vec::new();
        for i in 0..nq {
            let members = groups.group(i);
            if members.is_empty() {
                continue;
            }
            let w = &mut weights[groups.range(i)];
            match mode {
                AttentionMode::ScaledDot => {
                    let qi = tq.row(i);
                    logits.clear();
                    logits.extend(members.iter().map(|&j| dot(qi, tk.row(j))));
                    softmax_into(&logits, 1.0 / scale, w);
                }
                AttentionMode::Mean => w.fill(1.0 / members.len() as f64),
            }
            let oi = &mut out[i * dv..(i + 1) * dv];
            for (&j, &a) in members.iter().zip(w.iter()) {
                for (o, x) in oi.iter_mut().zip(tv.row(j)) {
                    *o += a * x;
                }
            }
        }
        let rg = self.rg(v) || (mode == AttentionMode::ScaledDot && (self.rg(q) || self.rg(k)));
        Ok(self.push(Tensor::new(vec![nq, dv], out)?, Op::Attention { q, k, v, groups, mode, scale, weights }, rg))
    }

    /// Per-row diagonal Gaussian log density of a constant `action`.
    ///
    /// `mean` and `action` are `n × d`; `log_std` holds `d` values shared by
    /// every row. Output has shape `[n]`.
    pub fn gaussian_logprob(&mut self, mean: Var, log_std: Var, action: Vec<f64>) -> Result<Var> {
        let (tm, ts) = (self.value(mean), self.value(log_std));
        let (n, d) = tm.dims2();
        if ts.len() != d || action.len() != n * d {
            return Err(dim_err("gaussian_logprob", tm, ts));
        }
        let out = gaussian_logprob_rows(tm.data(), ts.data(), &action, d);
        let rg = self.rg(mean) || self.rg(log_std);
        Ok(self.push(Tensor::vector(out), Op::GaussianLogProb { mean, log_std, action }, rg))
    }

    /// Reverse sweep from a scalar `loss`. Fills per-node gradient buffers and
    /// returns gradients for every parameter of `store` (zero where the loss
    /// does not depend on the parameter).
    pub fn backward(&mut self, loss: Var, store: &ParamStore) -> Result<Grads> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if self.nodes[idx].requires_grad {
                self.backprop_node(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        let mut out = Grads::zeros_like(store);
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, &g) {
                if id.0 < out.0.len() {
                    for (o, x) in out.0[id.0].iter_mut().zip(g) {
                        *o += x;
                    }
                }
            }
            node.value.grad = g;
        }
        Ok(out)
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let y = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if self.nodes[v.0].requires_grad {
                let buf = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
                f(buf);
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                acc(*a, &mut |da| gemm(m, n, k, g, false, tb.data(), true, da));
                acc(*b, &mut |db| gemm(k, m, n, ta.data(), true, g, false, db));
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |dx| add_into(dx, g));
                let cols = self.nodes[b.0].value.len();
                acc(*b, &mut |db| {
                    for row in g.chunks(cols) {
                        add_into(db, row);
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |d| zip3(d, g, vb, |g, o| g * o));
                acc(*b, &mut |d| zip3(d, g, va, |g, o| g * o));
            }
            Op::MulConst(a, c) => acc(*a, &mut |d| zip3(d, g, c, |g, c| g * c)),
            Op::Scale(a, s) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g * s)),
            Op::AddScalar(a) => acc(*a, &mut |d| add_into(d, g)),
            Op::Tanh(a) => acc(*a, &mut |d| zip3(d, g, y, |g, y| g * (1.0 - y * y))),
            Op::Exp(a) => acc(*a, &mut |d| zip3(d, g, y, |g, y| g * y)),
            Op::Square(a) => {
                let va = val(*a);
                acc(*a, &mut |d| zip3(d, g, va, |g, x| 2.0 * g * x));
            }
            Op::Clamp(a, lo, hi) => {
                let va = val(*a);
                acc(*a, &mut |d| zip3(d, g, va, |g, x| if x >= *lo && x <= *hi { g } else { 0.0 }));
            }
            Op::Minimum(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |d| {
                    for i in 0..d.len() {
                        if va[i] <= vb[i] {
                            d[i] += g[i];
                        }
                    }
                });
                acc(*b, &mut |d| {
                    for i in 0..d.len() {
                        if va[i] > vb[i] {
                            d[i] += g[i];
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.len() as f64;
                acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::ConcatCols(parts) => {
                let total = node.value.dims2().1;
                let rows = node.value.dims2().0;
                let mut off = 0;
                for p in parts {
                    let w = self.nodes[p.0].value.dims2().1;
                    acc(*p, &mut |d| {
                        for r in 0..rows {
                            add_into(&mut d[r * w..(r + 1) * w], &g[r * total + off..r * total + off + w]);
                        }
                    });
                    off += w;
                }
            }
            Op::Softmax(x, div) => {
                let cols = node.value.dims2().1;
                acc(*x, &mut |d| {
                    for ((dr, gr), yr) in d.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                        let s: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                        for i in 0..cols {
                            dr[i] += yr[i] * (gr[i] - s) / div;
                        }
                    }
                });
            }
            Op::Attention { q, k, v, groups, mode, scale, weights } => {
                let (tq, tk, tv) = (&self.nodes[q.0].value, &self.nodes[k.0].value, &self.nodes[v.0].value);
                let dk = tq.dims2().1;
                let dv = tv.dims2().1;
                acc(*v, &mut |d| {
                    for i in 0..groups.len() {
                        let gi = &g[i * dv..(i + 1) * dv];
                        for (&j, &a) in groups.group(i).iter().zip(&weights[groups.range(i)]) {
                            for (dd, gg) in d[j * dv..(j + 1) * dv].iter_mut().zip(gi) {
                                *dd += a * gg;
                            }
                        }
                    }
                });
                if *mode == AttentionMode::ScaledDot {
                    // d logit_ij = w_ij (g_i·v_j - sum_l w_il g_i·v_l)
                    let mut dlogits = vec![0.0; groups.total()];
                    for i in 0..groups.len() {
                        let gi = &g[i * dv..(i + 1) * dv];
                        let r = groups.range(i);
                        let w = &weights[r.clone()];
                        let dots: Vec<f64> = groups.group(i).iter().map(|&j| dot(gi, tv.row(j))).collect();
                        let s: f64 = w.iter().zip(&dots).map(|(a, b)| a * b).sum();
                        for (t, (a, dd)) in w.iter().zip(&dots).enumerate() {
                            dlogits[r.start + t] = a * (dd - s) * scale;
                        }
                    }
                    acc(*q, &mut |d| {
                        for i in 0..groups.len() {
                            let di = &mut d[i * dk..(i + 1) * dk];
                            for (&j, &dl) in groups.group(i).iter().zip(&dlogits[groups.range(i)]) {
                                for (x, kk) in di.iter_mut().zip(tk.row(j)) {
                                    *x += dl * kk;
                                }
                            }
                        }
                    });
                    acc(*k, &mut |d| {
                        for i in 0..groups.len() {
                            let qi = tq.row(i);
                            for (&j, &dl) in groups.group(i).iter().zip(&dlogits[groups.range(i)]) {
                                for (x, qq) in d[j * dk..(j + 1) * dk].iter_mut().zip(qi) {
                                    *x += dl * qq;
                                }
                            }
                        }
                    });
                }
            }
            Op::GaussianLogProb { mean, log_std, action } => {
                let mu = val(*mean);
                let ls = val(*log_std);
                let d = ls.len();
                acc(*mean, &mut |dm| {
                    for (r, gr) in g.iter().enumerate() {
                        for c in 0..d {
                            let i = r * d + c;
                            let var = (2.0 * ls[c]).exp();
                            dm[i] += gr * (action[i] - mu[i]) / var;
                        }
                    }
                });
                acc(*log_std, &mut |ds| {
                    for (r, gr) in g.iter().enumerate() {
                        for c in 0..d {
                            let i = r * d + c;
                            let z = (action[i] - mu[i]) / ls[c].exp();
                            ds[c] += gr * (z * z - 1.0);
                        }
                    }
                });
            }
        }
    }
}

fn add_into(d: &mut [f64], g: &[f64]) {
    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
}

fn zip3(d: &mut [f64], g: &[f64], o: &[f64], f: impl Fn(f64, f64) -> f64) {
    for ((d, g), o) in d.iter_mut().zip(g).zip(o) {
        *d += f(*g, *o);
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Max-subtracted softmax of `x / divisor` written into `out`.
pub(crate) fn softmax_into(x: &[f64], divisor: f64, out: &mut [f64]) {
    let mx = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, v) in out.iter_mut().zip(x) {
        *o = ((v - mx) / divisor).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub(crate) fn gaussian_logprob_rows(mean: &[f64], log_std: &[f64], action: &[f64], d: usize) -> Vec<f64> {
    mean.chunks(d)
        .zip(action.chunks(d))
        .map(|(m, a)| {
            m.iter()
                .zip(a)
                .zip(log_std)
                .map(|((m, a), ls)| {
                    let z = (a - m) / ls.exp();
                    -0.5 * z * z - ls - 0.5 * LN_2PI
                })
                .sum()
        })
        .collect()
}

/// `c += op(a) · op(b)` for row-major buffers, where `op(a)` is `m × k` and
/// `op(b)` is `k × n`. A transposed operand is stored in its untransposed
/// row-major layout.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64]) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the strides above describe buffers of at least m*k, k*n and m*n
    // elements, which the callers guarantee from the operand shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
