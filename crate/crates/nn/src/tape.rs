//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value. `backward` walks the
//! tape in reverse and only visits nodes that depend on a parameter.

use yoas_core::Scalar;

use crate::error::{shape_err, NnError, Result};
use crate::params::ParamSet;
use crate::tensor::{dot, gemm_nn, gemm_nt, gemm_tn, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

pub(crate) enum Op<T: Scalar> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Conv1d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    Embedding { table: Var, ids: Vec<usize> },
    Attention { q: Var, k: Var, v: Var, heads: usize, seq: usize, probs: Vec<T> },
    Mse(Var, Var),
    BceLogits { x: Var, y: Vec<T> },
    Reshape(Var),
    Concat { parts: Vec<Var>, axis: usize },
    SumAll(Var),
    MeanAll(Var),
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    live: bool,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass. Nodes the loss does not depend
/// on have no entry, which callers treat as zero.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Outer/axis/inner extents of a shape split at `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(shape_err(op, format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn live(&self, v: Var) -> bool {
        self.nodes[v.0].live
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, live: bool) -> Var {
        self.nodes.push(Node { value, op, live });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable leaf not bound to any parameter set.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Copies parameter `idx` of `ps` onto the tape as a differentiable leaf.
    pub fn param(&mut self, ps: &ParamSet<T>, idx: usize) -> Var {
        self.push(ps.value(idx).clone(), Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm_nn(self.data(a), self.data(b), &mut out, m, k, n);
        let live = self.live(a) || self.live(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), live))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.shape(a), self.shape(b))?;
        let out: Vec<T> = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        let live = self.live(a) || self.live(b);
        Ok(self.push(t, Op::Add(a, b), live))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, T::of(-1.0));
        self.add(a, nb)
    }

    /// Adds a `[C]` vector to every row of a tensor whose last dim is `C`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb.len() != 1 || sa.last() != Some(&sb[0]) {
            return Err(shape_err("add_bias", format!("{sa:?} + {sb:?}")));
        }
        let c = sb[0];
        let bd = self.data(bias);
        let out: Vec<T> = self.data(a).iter().enumerate().map(|(i, &x)| x + bd[i % c]).collect();
        let t = Tensor::new(sa.to_vec(), out)?;
        let live = self.live(a) || self.live(bias);
        Ok(self.push(t, Op::AddBias(a, bias), live))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.shape(a), self.shape(b))?;
        let out: Vec<T> = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        let live = self.live(a) || self.live(b);
        Ok(self.push(t, Op::Mul(a, b), live))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out: Vec<T> = self.data(a).iter().map(|&x| x * c).collect();
        let t = Tensor::new(self.shape(a).to_vec(), out).expect("same length");
        let live = self.live(a);
        self.push(t, Op::Scale(a, c), live)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out: Vec<T> = self.data(a).iter().map(|&x| x.max(T::zero())).collect();
        let t = Tensor::new(self.shape(a).to_vec(), out).expect("same length");
        let live = self.live(a);
        self.push(t, Op::Relu(a), live)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(shape_err("softmax", format!("axis {axis} for shape {shape:?}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let xd = self.data(x);
        let mut out = vec![T::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let mx = (0..n).map(|j| xd[idx(j)]).fold(T::neg_infinity(), T::max);
                let mut s = 0.0f64;
                for j in 0..n {
                    let e = (xd[idx(j)] - mx).exp();
                    out[idx(j)] = e;
                    s += e.f64();
                }
                let inv = T::of(1.0 / s);
                for j in 0..n {
                    out[idx(j)] = out[idx(j)] * inv;
                }
            }
        }
        let live = self.live(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x, axis }, live))
    }

    /// Normalizes over the last dim, then applies `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().ok_or_else(|| shape_err("layer_norm", "empty shape"))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err(
                "layer_norm",
                format!("{shape:?} with gamma {:?} beta {:?}", self.shape(gamma), self.shape(beta)),
            ));
        }
        let rows = self.value(x).numel() / c;
        let (xd, g, b) = (self.data(x), self.data(gamma), self.data(beta));
        let mut xhat = vec![T::zero(); xd.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xd.len()];
        for r in 0..rows {
            let row = &xd[r * c..(r + 1) * c];
            let mean = row.iter().map(|v| v.f64()).sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + 1e-5).sqrt();
            rstd[r] = T::of(rs);
            for j in 0..c {
                let h = T::of((row[j].f64() - mean) * rs);
                xhat[r * c + j] = h;
                out[r * c + j] = h * g[j] + b[j];
            }
        }
        let live = self.live(x) || self.live(gamma) || self.live(beta);
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::LayerNorm { x, gamma, beta, xhat, rstd }, live))
    }

    /// 1-D convolution. `x` is `[B, C_in, L]`, `w` is `[C_out, C_in, K]`,
    /// `b` is `[C_out]`; output is `[B, C_out, L_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] || stride == 0 {
            return Err(shape_err("conv1d", format!("input {sx:?} weight {sw:?} stride {stride}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                return Err(shape_err("conv1d", format!("bias {:?} for {} outputs", self.shape(b), sw[0])));
            }
        }
        let (bn, cin, l) = (sx[0], sx[1], sx[2]);
        let (cout, k) = (sw[0], sw[2]);
        if l + 2 * pad < k {
            return Err(shape_err("conv1d", format!("length {l} with padding {pad} shorter than kernel {k}")));
        }
        let lout = (l + 2 * pad - k) / stride + 1;
        let mut out = vec![T::zero(); bn * cout * lout];
        let mut cols = vec![T::zero(); cin * k * lout];
        for s in 0..bn {
            im2col(&self.data(x)[s * cin * l..(s + 1) * cin * l], &mut cols, cin, l, k, stride, pad, lout);
            let o = &mut out[s * cout * lout..(s + 1) * cout * lout];
            if let Some(b) = b {
                for (co, &bv) in self.data(b).iter().enumerate() {
                    o[co * lout..(co + 1) * lout].iter_mut().for_each(|v| *v = bv);
                }
            }
            gemm_nn(self.data(w), &cols, o, cout, cin * k, lout);
        }
        let live = self.live(x) || self.live(w) || b.is_some_and(|b| self.live(b));
        let t = Tensor::new(vec![bn, cout, lout], out)?;
        Ok(self.push(t, Op::Conv1d { x, w, b, stride, pad }, live))
    }

    /// Gathers rows of a `[V, H]` table.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(shape_err("embedding_lookup", format!("table {st:?}")));
        }
        let (v, h) = (st[0], st[1]);
        let td = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * h);
        for &id in ids {
            if id >= v {
                return Err(shape_err("embedding_lookup", format!("id {id} out of {v} rows")));
            }
            out.extend_from_slice(&td[id * h..(id + 1) * h]);
        }
        let live = self.live(table);
        let t = Tensor::new(vec![ids.len(), h], out)?;
        Ok(self.push(t, Op::Embedding { table, ids: ids.to_vec() }, live))
    }

    /// Scaled dot-product attention over `[B*seq, H]` projections, split
    /// into `heads` heads. Heads are concatenated back to `[B*seq, H]`;
    /// the output projection is left to the caller.
    pub fn multi_head_attention(&mut self, q: Var, k: Var, v: Var, heads: usize, seq: usize) -> Result<Var> {
        let s = self.shape(q).to_vec();
        same_shape("multi_head_attention", &s, self.shape(k))?;
        same_shape("multi_head_attention", &s, self.shape(v))?;
        if s.len() != 2 || heads == 0 || seq == 0 || !s[1].is_multiple_of(heads) || !s[0].is_multiple_of(seq) {
            return Err(shape_err(
                "multi_head_attention",
                format!("{s:?} with {heads} heads and sequence length {seq}"),
            ));
        }
        let (rows, h) = (s[0], s[1]);
        let d = h / heads;
        let batches = rows / seq;
        let scale = 1.0 / (d as f64).sqrt();
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut probs = vec![T::zero(); batches * heads * seq * seq];
        let mut out = vec![T::zero(); rows * h];
        let mut qh = vec![T::zero(); seq * d];
        let mut kh = vec![T::zero(); seq * d];
        for bi in 0..batches {
            for hd in 0..heads {
                for i in 0..seq {
                    let src = (bi * seq + i) * h + hd * d;
                    qh[i * d..(i + 1) * d].copy_from_slice(&qd[src..src + d]);
                    kh[i * d..(i + 1) * d].copy_from_slice(&kd[src..src + d]);
                }
                let p = &mut probs[(bi * heads + hd) * seq * seq..(bi * heads + hd + 1) * seq * seq];
                for i in 0..seq {
                    let row = &mut p[i * seq..(i + 1) * seq];
                    for j in 0..seq {
                        row[j] = dot(&qh[i * d..(i + 1) * d], &kh[j * d..(j + 1) * d]) * T::of(scale);
                    }
                    softmax_row(row);
                }
                for i in 0..seq {
                    let dst = (bi * seq + i) * h + hd * d;
                    for j in 0..seq {
                        let pij = p[i * seq + j];
                        let src = (bi * seq + j) * h + hd * d;
                        for c in 0..d {
                            out[dst + c] = out[dst + c] + pij * vd[src + c];
                        }
                    }
                }
            }
        }
        let live = self.live(q) || self.live(k) || self.live(v);
        let t = Tensor::new(vec![rows, h], out)?;
        Ok(self.push(t, Op::Attention { q, k, v, heads, seq, probs }, live))
    }

    /// Mean squared error; both sides may carry gradients.
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mse_loss", self.shape(a), self.shape(b))?;
        let n = self.value(a).numel().max(1);
        let s: f64 = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| (x - y).f64().powi(2)).sum();
        let live = self.live(a) || self.live(b);
        Ok(self.push(Tensor::scalar(T::of(s / n as f64)), Op::Mse(a, b), live))
    }

    /// Mean binary cross-entropy of logits `x` against constant targets.
    pub fn bce_with_logits(&mut self, x: Var, targets: &[T]) -> Result<Var> {
        if self.value(x).numel() != targets.len() {
            return Err(shape_err(
                "bce_with_logits",
                format!("{} logits vs {} targets", self.value(x).numel(), targets.len()),
            ));
        }
        let n = targets.len().max(1);
        let s: f64 = self
            .data(x)
            .iter()
            .zip(targets)
            .map(|(&l, &y)| {
                let (l, y) = (l.f64(), y.f64());
                l.max(0.0) - l * y + (-l.abs()).exp().ln_1p()
            })
            .sum();
        let live = self.live(x);
        Ok(self.push(Tensor::scalar(T::of(s / n as f64)), Op::BceLogits { x, y: targets.to_vec() }, live))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let live = self.live(x);
        Ok(self.push(t, Op::Reshape(x), live))
    }

    /// Concatenates along `axis`; all other dims must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| shape_err("concat", "no inputs"))?).to_vec();
        if axis >= first.len() {
            return Err(shape_err("concat", format!("axis {axis} for shape {first:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s.iter().zip(&first).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(shape_err("concat", format!("{s:?} vs {first:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let n = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.data(p)[o * n..(o + 1) * n]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let live = parts.iter().any(|&p| self.live(p));
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat { parts: parts.to_vec(), axis }, live))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        self.concat(parts, 0)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.data(x).iter().map(|v| v.f64()).sum();
        let live = self.live(x);
        self.push(Tensor::scalar(T::of(s)), Op::SumAll(x), live)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1);
        let s: f64 = self.data(x).iter().map(|v| v.f64()).sum();
        let live = self.live(x);
        self.push(Tensor::scalar(T::of(s / n as f64)), Op::MeanAll(x), live)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(NnError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].live {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
        if !self.live(v) {
            return None;
        }
        let n = self.value(v).numel();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn add_into(&self, grads: &mut [Option<Vec<T>>], v: Var, g: &[T]) {
        if let Some(dst) = self.acc(grads, v) {
            for (a, &b) in dst.iter_mut().zip(g) {
                *a = *a + b;
            }
        }
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                if let Some(da) = self.acc(grads, a) {
                    gemm_nt(g, self.data(b), da, m, n, k);
                }
                if let Some(db) = self.acc(grads, b) {
                    gemm_tn(self.data(a), g, db, k, m, n);
                }
            }
            &Op::Add(a, b) => {
                self.add_into(grads, a, g);
                self.add_into(grads, b, g);
            }
            &Op::AddBias(a, bias) => {
                self.add_into(grads, a, g);
                if let Some(db) = self.acc(grads, bias) {
                    let c = db.len();
                    for (j, &gv) in g.iter().enumerate() {
                        db[j % c] = db[j % c] + gv;
                    }
                }
            }
            &Op::Mul(a, b) => {
                if self.live(a) {
                    let t: Vec<T> = g.iter().zip(self.data(b)).map(|(&x, &y)| x * y).collect();
                    self.add_into(grads, a, &t);
                }
                if self.live(b) {
                    let t: Vec<T> = g.iter().zip(self.data(a)).map(|(&x, &y)| x * y).collect();
                    self.add_into(grads, b, &t);
                }
            }
            &Op::Scale(a, c) => {
                let t: Vec<T> = g.iter().map(|&x| x * c).collect();
                self.add_into(grads, a, &t);
            }
            &Op::Relu(a) => {
                let t: Vec<T> = g
                    .iter()
                    .zip(self.data(a))
                    .map(|(&gv, &x)| if x > T::zero() { gv } else { T::zero() })
                    .collect();
                self.add_into(grads, a, &t);
            }
            &Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, n, inner) = split_axis(node.value.shape(), axis);
                let mut t = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for ii in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + ii;
                        let s: f64 = (0..n).map(|j| (g[idx(j)] * y[idx(j)]).f64()).sum();
                        for j in 0..n {
                            t[idx(j)] = y[idx(j)] * (g[idx(j)] - T::of(s));
                        }
                    }
                }
                self.add_into(grads, x, &t);
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let c = self.shape(*gamma)[0];
                let rows = rstd.len();
                let gm = self.data(*gamma);
                if let Some(db) = self.acc(grads, *beta) {
                    for (j, &gv) in g.iter().enumerate() {
                        db[j % c] = db[j % c] + gv;
                    }
                }
                if let Some(dg) = self.acc(grads, *gamma) {
                    for (j, (&gv, &h)) in g.iter().zip(xhat).enumerate() {
                        dg[j % c] = dg[j % c] + gv * h;
                    }
                }
                if let Some(dx) = self.acc(grads, *x) {
                    for r in 0..rows {
                        let gr = &g[r * c..(r + 1) * c];
                        let hr = &xhat[r * c..(r + 1) * c];
                        let mut m1 = 0.0f64;
                        let mut m2 = 0.0f64;
                        for j in 0..c {
                            let dh = (gr[j] * gm[j]).f64();
                            m1 += dh;
                            m2 += dh * hr[j].f64();
                        }
                        m1 /= c as f64;
                        m2 /= c as f64;
                        let rs = rstd[r].f64();
                        for j in 0..c {
                            let dh = (gr[j] * gm[j]).f64();
                            let v = rs * (dh - m1 - hr[j].f64() * m2);
                            dx[r * c + j] = dx[r * c + j] + T::of(v);
                        }
                    }
                }
            }
            &Op::Conv1d { x, w, b, stride, pad } => {
                let (sx, sw) = (self.shape(x), self.shape(w));
                let (bn, cin, l) = (sx[0], sx[1], sx[2]);
                let (cout, k) = (sw[0], sw[2]);
                let lout = node.value.shape()[2];
                if let Some(b) = b {
                    if let Some(db) = self.acc(grads, b) {
                        for s in 0..bn {
                            for co in 0..cout {
                                let off = (s * cout + co) * lout;
                                let sum: f64 = g[off..off + lout].iter().map(|v| v.f64()).sum();
                                db[co] = db[co] + T::of(sum);
                            }
                        }
                    }
                }
                let need_w = self.live(w);
                let need_x = self.live(x);
                let mut cols = vec![T::zero(); cin * k * lout];
                let mut dw = vec![T::zero(); if need_w { cout * cin * k } else { 0 }];
                let mut dx = vec![T::zero(); if need_x { bn * cin * l } else { 0 }];
                for s in 0..bn {
                    let go = &g[s * cout * lout..(s + 1) * cout * lout];
                    if need_w {
                        im2col(&self.data(x)[s * cin * l..(s + 1) * cin * l], &mut cols, cin, l, k, stride, pad, lout);
                        gemm_nt(go, &cols, &mut dw, cout, lout, cin * k);
                    }
                    if need_x {
                        cols.iter_mut().for_each(|v| *v = T::zero());
                        gemm_tn(self.data(w), go, &mut cols, cin * k, cout, lout);
                        col2im(&cols, &mut dx[s * cin * l..(s + 1) * cin * l], cin, l, k, stride, pad, lout);
                    }
                }
                if need_w {
                    self.add_into(grads, w, &dw);
                }
                if need_x {
                    self.add_into(grads, x, &dx);
                }
            }
            Op::Embedding { table, ids } => {
                if let Some(dt) = self.acc(grads, *table) {
                    let h = node.value.shape()[1];
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..h {
                            dt[id * h + c] = dt[id * h + c] + g[r * h + c];
                        }
                    }
                }
            }
            Op::Attention { q, k, v, heads, seq, probs } => {
                self.attention_backward(*q, *k, *v, *heads, *seq, probs, g, grads);
            }
            &Op::Mse(a, b) => {
                let n = self.value(a).numel().max(1);
                let c = g[0] * T::of(2.0 / n as f64);
                let d: Vec<T> = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| (x - y) * c).collect();
                self.add_into(grads, a, &d);
                if self.live(b) {
                    let nd: Vec<T> = d.iter().map(|&x| -x).collect();
                    self.add_into(grads, b, &nd);
                }
            }
            Op::BceLogits { x, y } => {
                let c = g[0] * T::of(1.0 / y.len().max(1) as f64);
                let d: Vec<T> = self
                    .data(*x)
                    .iter()
                    .zip(y)
                    .map(|(&l, &t)| (T::one() / (T::one() + (-l).exp()) - t) * c)
                    .collect();
                self.add_into(grads, *x, &d);
            }
            &Op::Reshape(x) => self.add_into(grads, x, g),
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut start = 0;
                for &p in parts {
                    let w = self.shape(p)[*axis];
                    if self.live(p) {
                        let mut t = Vec::with_capacity(outer * w * inner);
                        for o in 0..outer {
                            let off = (o * total + start) * inner;
                            t.extend_from_slice(&g[off..off + w * inner]);
                        }
                        self.add_into(grads, p, &t);
                    }
                    start += w;
                }
            }
            &Op::SumAll(x) => {
                let t = vec![g[0]; self.value(x).numel()];
                self.add_into(grads, x, &t);
            }
            &Op::MeanAll(x) => {
                let n = self.value(x).numel();
                let t = vec![g[0] * T::of(1.0 / n.max(1) as f64); n];
                self.add_into(grads, x, &t);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seq: usize,
        probs: &[T],
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let s = self.shape(q);
        let (rows, h) = (s[0], s[1]);
        let d = h / heads;
        let batches = rows / seq;
        let scale = T::of(1.0 / (d as f64).sqrt());
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut dq = vec![T::zero(); rows * h];
        let mut dk = vec![T::zero(); rows * h];
        let mut dv = vec![T::zero(); rows * h];
        let mut dp = vec![T::zero(); seq * seq];
        for bi in 0..batches {
            for hd in 0..heads {
                let p = &probs[(bi * heads + hd) * seq * seq..(bi * heads + hd + 1) * seq * seq];
                let at = |i: usize| (bi * seq + i) * h + hd * d;
                for i in 0..seq {
                    for j in 0..seq {
                        let pij = p[i * seq + j];
                        let mut acc = T::zero();
                        for c in 0..d {
                            dv[at(j) + c] = dv[at(j) + c] + pij * g[at(i) + c];
                            acc = acc + g[at(i) + c] * vd[at(j) + c];
                        }
                        dp[i * seq + j] = acc;
                    }
                }
                for i in 0..seq {
                    let row_dot: f64 = (0..seq).map(|j| (dp[i * seq + j] * p[i * seq + j]).f64()).sum();
                    for j in 0..seq {
                        let ds = p[i * seq + j] * (dp[i * seq + j] - T::of(row_dot)) * scale;
                        for c in 0..d {
                            dq[at(i) + c] = dq[at(i) + c] + ds * kd[at(j) + c];
                            dk[at(j) + c] = dk[at(j) + c] + ds * qd[at(i) + c];
                        }
                    }
                }
            }
        }
        self.add_into(grads, q, &dq);
        self.add_into(grads, k, &dk);
        self.add_into(grads, v, &dv);
    }
}

fn softmax_row<T: Scalar>(row: &mut [T]) {
    let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = 0.0f64;
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        s += v.f64();
    }
    let inv = T::of(1.0 / s);
    row.iter_mut().for_each(|v| *v = *v * inv);
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(x: &[T], cols: &mut [T], cin: usize, l: usize, k: usize, stride: usize, pad: usize, lout: usize) {
    for c in 0..cin {
        for kk in 0..k {
            let row = &mut cols[(c * k + kk) * lout..(c * k + kk + 1) * lout];
            for (t, dst) in row.iter_mut().enumerate() {
                let pos = (t * stride + kk) as isize - pad as isize;
                *dst = if pos >= 0 && (pos as usize) < l { x[c * l + pos as usize] } else { T::zero() };
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(cols: &[T], dx: &mut [T], cin: usize, l: usize, k: usize, stride: usize, pad: usize, lout: usize) {
    for c in 0..cin {
        for kk in 0..k {
            let row = &cols[(c * k + kk) * lout..(c * k + kk + 1) * lout];
            for (t, &v) in row.iter().enumerate() {
                let pos = (t * stride + kk) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < l {
                    dx[c * l + pos as usize] = dx[c * l + pos as usize] + v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Bound;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn relu_values() {
        let mut tp = Tape::<f64>::new();
        let x = tp.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = tp.relu(x);
        assert_eq!(tp.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_uniform_and_normalized() {
        let mut tp = Tape::<f32>::new();
        let x = tp.constant(Tensor::new(vec![4], vec![0.7; 4]).unwrap());
        let y = tp.softmax(x, 0).unwrap();
        for &v in tp.value(y).data() {
            assert!((v - 0.25).abs() < 1e-7);
        }
        let z = tp.constant(Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 3.0, 3.0, -1.0]).unwrap());
        for axis in 0..2 {
            let s = tp.softmax(z, axis).unwrap();
            let (outer, n, inner) = split_axis(&[2, 3], axis);
            let d = tp.value(s).data();
            for o in 0..outer {
                for i in 0..inner {
                    let sum: f32 = (0..n).map(|j| d[(o * n + j) * inner + i]).sum();
                    assert!((sum - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn square_gradient() {
        let mut tp = Tape::<f64>::new();
        let x = tp.input(t(&[1], &[3.0]));
        let y = tp.mul(x, x).unwrap();
        let l = tp.sum_all(y);
        let g = tp.backward(l).unwrap();
        assert!((g.wrt(x).unwrap()[0] - 6.0).abs() < 1e-4);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tp = Tape::<f64>::new();
        let x = tp.input(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tp.backward(x), Err(NnError::Contract(_))));
    }

    #[test]
    fn disconnected_parameter_gets_zero() {
        let mut ps = ParamSet::<f64>::new();
        let a = ps.add("a", t(&[2], &[1.0, 2.0]));
        let b = ps.add("b", t(&[2], &[3.0, 4.0]));
        let mut tp = Tape::new();
        let bound = Bound::new(&mut tp, &ps);
        let l = tp.sum_all(bound.get(a));
        bound.accumulate(&tp.backward(l).unwrap(), &mut ps);
        assert_eq!(ps.grad(a), &[1.0, 1.0]);
        assert_eq!(ps.grad(b), &[0.0, 0.0]);
    }

    #[test]
    fn identity_attention_matches_hand_value() {
        // One head, Q = K = V = I: scores are I/sqrt(2), so each row's
        // softmax puts e^{1/sqrt 2} / (e^{1/sqrt 2} + 1) on the diagonal.
        let mut tp = Tape::<f64>::new();
        let id = tp.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let o = tp.multi_head_attention(id, id, id, 1, 2).unwrap();
        let e = (1.0f64 / 2.0f64.sqrt()).exp();
        let diag = e / (e + 1.0);
        let want = [diag, 1.0 - diag, 1.0 - diag, diag];
        for (a, b) in tp.value(o).data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((diag - 0.66976).abs() < 1e-5);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut tp = Tape::<f64>::new();
        let a = tp.constant(Tensor::zeros(&[2, 3]));
        let b = tp.constant(Tensor::zeros(&[2, 3]));
        match tp.matmul(a, b) {
            Err(NnError::Shape { op, .. }) => assert_eq!(op, "matmul"),
            other => panic!("{:?}", other.map(|_| ())),
        }
        assert!(tp.multi_head_attention(a, a, a, 2, 2).is_err());
        assert!(tp.concat(&[], 0).is_err());
    }

    #[test]
    fn conv1d_matches_direct_sum() {
        let mut tp = Tape::<f64>::new();
        let xv: Vec<f64> = (0..2 * 2 * 7).map(|i| (i as f64 * 0.3).sin()).collect();
        let wv: Vec<f64> = (0..3 * 2 * 3).map(|i| (i as f64 * 0.7).cos()).collect();
        let x = tp.constant(t(&[2, 2, 7], &xv));
        let w = tp.constant(t(&[3, 2, 3], &wv));
        let b = tp.constant(t(&[3], &[0.1, -0.2, 0.3]));
        let y = tp.conv1d(x, w, Some(b), 2, 1).unwrap();
        assert_eq!(tp.value(y).shape(), &[2, 3, 4]);
        let yd = tp.value(y).data();
        for s in 0..2 {
            for o in 0..3 {
                for tt in 0..4 {
                    let mut want = [0.1, -0.2, 0.3][o];
                    for c in 0..2 {
                        for kk in 0..3 {
                            let pos = (tt * 2 + kk) as isize - 1;
                            if (0..7).contains(&pos) {
                                want += wv[(o * 2 + c) * 3 + kk] * xv[(s * 2 + c) * 7 + pos as usize];
                            }
                        }
                    }
                    assert!((yd[(s * 3 + o) * 4 + tt] - want).abs() < 1e-12);
                }
            }
        }
    }
}
