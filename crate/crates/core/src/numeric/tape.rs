//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] borrows a [`ParamStore`] immutably for the duration of a
//! forward pass and records every operation in execution order. Parameters
//! enter the tape through [`Tape::param`] without being copied. Calling
//! [`Tape::backward`] consumes the tape and returns the exact adjoint of every
//! reachable parameter, which the caller folds into the store with
//! [`ParamStore::accumulate`].

use std::collections::HashMap;
use std::rc::Rc;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{dims2, matmul_at_into, matmul_bt_into, matmul_into, Tensor};
use crate::error::{Error, Result};

/// Stand-in for −∞ at masked softmax entries before exponentiation.
pub const MASK_SURROGATE: f64 = -1e30;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    MulConst(Var, Rc<Tensor>),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    MaskedSoftmax(Var),
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    MaskedCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        active: Vec<bool>,
        probs: Tensor,
        count: usize,
    },
    Sum(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
}

struct Node {
    value: Value,
    op: Op,
}

pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.value(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }

    /// Leaf for a stored parameter. Repeated calls return the same handle.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    /// Pre-activation inputs of every ReLU recorded so far.
    pub fn relu_inputs(&self) -> impl Iterator<Item = &Tensor> {
        self.nodes.iter().filter_map(|n| match n.op {
            Op::Relu(x) => Some(self.value(x)),
            _ => None,
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a), "matmul")?;
        let (k2, n) = dims2(self.value(b), "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b)))
    }

    /// `a · bᵀ` for `a: [m,k]`, `b: [n,k]`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a), "matmul_bt")?;
        let (n, k2) = dims2(self.value(b), "matmul_bt")?;
        if k != k2 {
            return Err(Error::shape("matmul_bt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        matmul_bt_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulBt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", self.shape(a), self.shape(b)));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a `[c]` vector to every row of an `[.., c]` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = self.value(x).last_dim();
        if self.shape(bias) != [c] {
            return Err(Error::shape("add_bias", self.shape(x), self.shape(bias)));
        }
        let mut out = self.value(x).clone();
        let b = self.value(bias).data();
        for row in out.data_mut().chunks_mut(c.max(1)) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        if self.shape(x) != c.shape() {
            return Err(Error::shape("mul_const", self.shape(x), c.shape()));
        }
        let mut out = self.value(x).clone();
        for (o, m) in out.data_mut().iter_mut().zip(c.data()) {
            *o *= m;
        }
        Ok(self.push(out, Op::MulConst(x, Rc::new(c))))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s))
    }

    /// ReLU with derivative 0 at exactly 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(out, Op::Relu(x))
    }

    /// Exact (erf) GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        self.push(out, Op::Gelu(x))
    }

    /// Standardizes each last-axis row then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let h = self.value(x).last_dim();
        if h == 0 || !(eps > 0.0) {
            return Err(Error::Config(format!(
                "layer_norm needs h >= 1 and eps > 0 (h={h}, eps={eps})"
            )));
        }
        for p in [gamma, beta] {
            if self.shape(p) != [h] {
                return Err(Error::shape("layer_norm", self.shape(x), self.shape(p)));
            }
        }
        let xv = self.value(x);
        let rows = xv.rows();
        let mut xhat = Tensor::zeros(xv.shape());
        let mut out = Tensor::zeros(xv.shape());
        let mut inv_std = Vec::with_capacity(rows);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / h as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            let xr = xhat.row_mut(r);
            for (o, v) in xr.iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            let orow = out.row_mut(r);
            for j in 0..h {
                orow[j] = xhat.row(r)[j] * g[j] + b[j];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Row-wise softmax over the last axis; `mask[i] == false` entries are
    /// excluded and come out as exactly 0.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let out = masked_softmax(self.value(x), mask)?;
        Ok(self.push(out, Op::MaskedSoftmax(x)))
    }

    /// Looks up rows of a `[v,h]` table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, h) = dims2(self.value(table), "gather_rows")?;
        let t = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * h);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    what: "embedding table",
                    index: id,
                    size: v,
                });
            }
            out.extend_from_slice(&t[id * h..(id + 1) * h]);
        }
        let out = Tensor::new(vec![ids.len(), h], out)?;
        Ok(self.push(
            out,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Mean over active rows of `-log softmax(logits)[target]`.
    pub fn masked_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        active: &[bool],
    ) -> Result<Var> {
        let (l, v) = dims2(self.value(logits), "masked_cross_entropy")?;
        if targets.len() != l || active.len() != l {
            return Err(Error::Arity {
                what: "targets/active entries",
                expected: l,
                got: targets.len().min(active.len()),
            });
        }
        let count = active.iter().filter(|&&a| a).count();
        if count == 0 {
            return Err(Error::EmptyLoss);
        }
        let lv = self.value(logits);
        let mut probs = Tensor::zeros(&[l, v]);
        let mut total = 0.0;
        for i in 0..l {
            if !active[i] {
                continue;
            }
            let t = targets[i];
            if t >= v {
                return Err(Error::Index {
                    what: "target",
                    index: t,
                    size: v,
                });
            }
            let row = lv.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let logz = z.ln() + max;
            total += logz - row[t];
            for (p, x) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (x - logz).exp();
            }
        }
        let loss = Tensor::scalar(total / count as f64);
        Ok(self.push(
            loss,
            Op::MaskedCrossEntropy {
                logits,
                targets: targets.to_vec(),
                active: active.to_vec(),
                probs,
                count,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Columns `start..start+len` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = dims2(self.value(x), "slice_cols")?;
        if start + len > n {
            return Err(Error::Range {
                what: "column slice end",
                value: start + len,
                limit: n,
            });
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&xv[i * n + start..i * n + start + len]);
        }
        let out = Tensor::new(vec![m, len], out)?;
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = match parts.first() {
            Some(&p) => dims2(self.value(p), "concat_cols")?.0,
            None => return Err(Error::Config("concat_cols of nothing".into())),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = dims2(self.value(p), "concat_cols")?;
            if pm != m {
                return Err(Error::shape("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let out = Tensor::new(vec![m, n], out)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = match parts.first() {
            Some(&p) => dims2(self.value(p), "concat_rows")?.1,
            None => return Err(Error::Config("concat_rows of nothing".into())),
        };
        let mut m = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pm, pn) = dims2(self.value(p), "concat_rows")?;
            if pn != n {
                return Err(Error::shape("concat_rows", self.shape(parts[0]), self.shape(p)));
            }
            m += pm;
            out.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new(vec![m, n], out)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Replays the tape from the scalar `loss` and returns `d loss / d p` for
    /// every parameter that entered the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let lshape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(Error::Rank {
                shape: lshape.to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lshape, 1.0));
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.insert(*id, g),
                Op::MatMul(a, b) => {
                    let (m, k) = dims2(self.value(*a), "matmul")?;
                    let n = self.value(*b).shape()[1];
                    let ga = slot(&mut grads, *a, self.value(*a).shape());
                    matmul_bt_into(g.data(), self.value(*b).data(), ga.data_mut(), m, n, k);
                    let gb = slot(&mut grads, *b, self.value(*b).shape());
                    matmul_at_into(self.value(*a).data(), g.data(), gb.data_mut(), m, k, n);
                }
                Op::MatMulBt(a, b) => {
                    let (m, k) = dims2(self.value(*a), "matmul_bt")?;
                    let n = self.value(*b).shape()[0];
                    let ga = slot(&mut grads, *a, self.value(*a).shape());
                    matmul_into(g.data(), self.value(*b).data(), ga.data_mut(), m, n, k);
                    let gb = slot(&mut grads, *b, self.value(*b).shape());
                    matmul_at_into(g.data(), self.value(*a).data(), gb.data_mut(), m, n, k);
                }
                Op::Add(a, b) => {
                    slot(&mut grads, *a, g.shape()).add_assign(&g);
                    slot(&mut grads, *b, g.shape()).add_assign(&g);
                }
                Op::AddBias(x, bias) => {
                    let c = g.last_dim();
                    let gb = slot(&mut grads, *bias, &[c]);
                    for row in g.data().chunks(c.max(1)) {
                        for (o, v) in gb.data_mut().iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    slot(&mut grads, *x, g.shape()).add_assign(&g);
                }
                Op::MulConst(x, c) => {
                    let gx = slot(&mut grads, *x, g.shape());
                    for ((o, gv), cv) in gx.data_mut().iter_mut().zip(g.data()).zip(c.data()) {
                        *o += gv * cv;
                    }
                }
                Op::Scale(x, s) => {
                    let gx = slot(&mut grads, *x, g.shape());
                    for (o, gv) in gx.data_mut().iter_mut().zip(g.data()) {
                        *o += gv * s;
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x).data();
                    let gx = slot(&mut grads, *x, g.shape());
                    for ((o, gv), &xv) in gx.data_mut().iter_mut().zip(g.data()).zip(xv) {
                        if xv > 0.0 {
                            *o += gv;
                        }
                    }
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x).data();
                    let gx = slot(&mut grads, *x, g.shape());
                    for ((o, gv), &xv) in gx.data_mut().iter_mut().zip(g.data()).zip(xv) {
                        *o += gv * gelu_grad(xv);
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let h = g.last_dim();
                    let gam = self.value(*gamma).data();
                    let mut dgamma = vec![0.0; h];
                    let mut dbeta = vec![0.0; h];
                    let mut dx = Tensor::zeros(g.shape());
                    let mut dxhat = vec![0.0; h];
                    for r in 0..g.rows() {
                        let dy = g.row(r);
                        let xh = xhat.row(r);
                        for j in 0..h {
                            dbeta[j] += dy[j];
                            dgamma[j] += dy[j] * xh[j];
                            dxhat[j] = dy[j] * gam[j];
                        }
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
                        let k = inv_std[r] / h as f64;
                        for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = k * (h as f64 * dxhat[j] - s1 - xh[j] * s2);
                        }
                    }
                    slot(&mut grads, *x, g.shape()).add_assign(&dx);
                    slot(&mut grads, *gamma, &[h]).add_assign(&Tensor::vector(dgamma));
                    slot(&mut grads, *beta, &[h]).add_assign(&Tensor::vector(dbeta));
                }
                Op::MaskedSoftmax(x) => {
                    let y = self.value(Var(idx));
                    let gx = slot(&mut grads, *x, g.shape());
                    for r in 0..g.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, &yv), &gv) in gx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o += yv * (gv - dot);
                        }
                    }
                }
                Op::GatherRows { table, ids } => {
                    let tshape = self.value(*table).shape().to_vec();
                    let h = tshape[1];
                    let gt = slot(&mut grads, *table, &tshape);
                    for (i, &id) in ids.iter().enumerate() {
                        let src = &g.data()[i * h..(i + 1) * h];
                        for (o, v) in gt.data_mut()[id * h..(id + 1) * h].iter_mut().zip(src) {
                            *o += v;
                        }
                    }
                }
                Op::MaskedCrossEntropy {
                    logits,
                    targets,
                    active,
                    probs,
                    count,
                } => {
                    let scale = g.data()[0] / *count as f64;
                    let gl = slot(&mut grads, *logits, probs.shape());
                    for (i, (&t, &a)) in targets.iter().zip(active).enumerate() {
                        if !a {
                            continue;
                        }
                        let row = gl.row_mut(i);
                        for (o, p) in row.iter_mut().zip(probs.row(i)) {
                            *o += scale * p;
                        }
                        row[t] -= scale;
                    }
                }
                Op::Sum(x) => {
                    let s = g.data()[0];
                    let gx = slot(&mut grads, *x, self.value(*x).shape());
                    gx.data_mut().iter_mut().for_each(|o| *o += s);
                }
                Op::SliceCols { x, start } => {
                    let (m, len) = dims2(&g, "slice_cols")?;
                    let n = self.value(*x).shape()[1];
                    let gx = slot(&mut grads, *x, self.value(*x).shape());
                    for i in 0..m {
                        let dst = &mut gx.data_mut()[i * n + start..i * n + start + len];
                        for (o, v) in dst.iter_mut().zip(&g.data()[i * len..(i + 1) * len]) {
                            *o += v;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let (m, n) = dims2(&g, "concat_cols")?;
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).shape()[1];
                        let gp = slot(&mut grads, p, self.value(p).shape());
                        for i in 0..m {
                            let src = &g.data()[i * n + off..i * n + off + w];
                            for (o, v) in gp.data_mut()[i * w..(i + 1) * w].iter_mut().zip(src) {
                                *o += v;
                            }
                        }
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        let gp = slot(&mut grads, p, self.value(p).shape());
                        for (o, v) in gp.data_mut().iter_mut().zip(&g.data()[off..off + len]) {
                            *o += v;
                        }
                        off += len;
                    }
                }
                Op::Reshape(x) => {
                    let gx = slot(&mut grads, *x, self.value(*x).shape());
                    for (o, v) in gx.data_mut().iter_mut().zip(g.data()) {
                        *o += v;
                    }
                }
            }
        }
        Ok(out)
    }
}

fn slot<'g>(grads: &'g mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'g mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

/// Masked row softmax without gradient recording.
pub fn masked_softmax(x: &Tensor, mask: &[bool]) -> Result<Tensor> {
    if mask.len() != x.len() {
        return Err(Error::shape("masked_softmax", x.shape(), &[mask.len()]));
    }
    let n = x.last_dim();
    let mut out = Tensor::zeros(x.shape());
    if n == 0 {
        return Ok(out);
    }
    for r in 0..x.rows() {
        let row = x.row(r);
        let m = &mask[r * n..(r + 1) * n];
        let shifted: Vec<f64> = row
            .iter()
            .zip(m)
            .map(|(&v, &keep)| if keep { v } else { MASK_SURROGATE })
            .collect();
        if !m.iter().any(|&k| k) {
            return Err(Error::InvalidMask { row: r });
        }
        let max = shifted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let orow = out.row_mut(r);
        let mut z = 0.0;
        for ((o, &v), &keep) in orow.iter_mut().zip(&shifted).zip(m) {
            *o = if keep { (v - max).exp() } else { 0.0 };
            z += *o;
        }
        for o in orow.iter_mut() {
            *o /= z;
        }
    }
    Ok(out)
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}
