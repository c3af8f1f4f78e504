//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] on a scalar node walks the record in reverse and
//! returns [`Gradients`] for every node that requires them. The tape is
//! meant to be built per batch and dropped afterwards.
//!
//! All matrices are 2-D row-major; sequence batches are packed as
//! `[batch * seq, features]`.

use super::tensor::{dot, gemm_nt, gemm_tn, softmax_in_place, Tensor};
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddTiled(Var, Var, usize),
    Mul(Var, Var),
    MulConst(Var, Vec<f64>),
    Scale(Var, f64),
    ScaleShiftCols(Var, Vec<f64>),
    Relu(Var),
    Gelu(Var),
    Square(Var),
    Sum(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    CausalAttention {
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        probs: Vec<f64>,
    },
    MseLoss(Var, Tensor),
}

/// Packing of a multi-head causal attention call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionShape {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Record of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros when `var` does not influence the loss.
    pub fn get(&self, var: Var) -> Tensor {
        self.grads[var.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        self.grads[var.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

pub(crate) fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let inner = C * (x + 0.044_715 * x * x * x);
    let t = inner.tanh();
    let value = 0.5 * x * (1.0 + t);
    let d_inner = C * (1.0 + 3.0 * 0.044_715 * x * x);
    let grad = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner;
    (value, grad)
}

/// Row-wise layer normalization: returns the output, the normalized input
/// and each row's inverse standard deviation.
pub(crate) fn layer_norm_rows(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let n = x.cols();
    let mut normalized = Vec::with_capacity(x.len());
    let mut inv_std = Vec::with_capacity(x.rows());
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(n) {
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(inv);
        for (j, v) in row.iter().enumerate() {
            let xh = (v - mean) * inv;
            normalized.push(xh);
            out.push(xh * gamma[j] + beta[j]);
        }
    }
    let out = Tensor::new(x.shape(), out).expect("same shape as input");
    (out, normalized, inv_std)
}

/// Causal multi-head attention forward pass on packed `[batch*seq, d]` inputs.
///
/// Returns the concatenated head outputs and the attention probabilities laid
/// out as `[batch, heads, seq, seq]` (zero above the diagonal).
pub fn causal_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    shape: AttentionShape,
) -> Result<(Tensor, Vec<f64>)> {
    let AttentionShape { batch, seq, heads } = shape;
    let d = q.cols();
    if !q.same_shape(k) || !q.same_shape(v) || q.rows() != batch * seq {
        return Err(Error::dim("attention inputs must all be [batch*seq, d]"));
    }
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::dim(format!(
            "{d} features not divisible into {heads} heads"
        )));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let mut out = vec![0.0; batch * seq * d];
    let mut probs = vec![0.0; batch * heads * seq * seq];
    for b in 0..batch {
        for h in 0..heads {
            let col = h * dh;
            for i in 0..seq {
                let qi = &qd[(b * seq + i) * d + col..][..dh];
                let row = &mut probs[((b * heads + h) * seq + i) * seq..][..seq];
                for j in 0..=i {
                    let kj = &kd[(b * seq + j) * d + col..][..dh];
                    row[j] = dot(qi, kj) * scale;
                }
                softmax_in_place(&mut row[..=i]);
                let o = &mut out[(b * seq + i) * d + col..][..dh];
                for j in 0..=i {
                    let p = row[j];
                    let vj = &vd[(b * seq + j) * d + col..][..dh];
                    for (ov, &vv) in o.iter_mut().zip(vj) {
                        *ov += p * vv;
                    }
                }
            }
        }
    }
    Ok((Tensor::new(&[batch * seq, d], out)?, probs))
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable input; gradients are tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.same_shape(vb) {
            return Err(Error::dim(format!(
                "add of {:?} and {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let mut value = va.clone();
        value.add_assign(vb);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    /// `x[m, n] + bias[n]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let n = vx.cols();
        if vb.len() != n {
            return Err(Error::dim(format!(
                "bias of {} entries for {n} columns",
                vb.len()
            )));
        }
        let mut value = vx.clone();
        for row in value.data_mut().chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(value, Op::AddRow(x, bias), needs))
    }

    /// `x[batch*seq, d] + table[seq', d]` where the first `seq` rows of the
    /// table are repeated for every sequence in the batch.
    pub fn add_tiled(&mut self, x: Var, table: Var, seq: usize) -> Result<Var> {
        let (vx, vt) = (self.value(x), self.value(table));
        let d = vx.cols();
        if vt.cols() != d || vt.rows() < seq || seq == 0 || vx.rows() % seq != 0 {
            return Err(Error::dim(format!(
                "cannot tile {:?} over {:?} with sequence length {seq}",
                vt.shape(),
                vx.shape()
            )));
        }
        let mut value = vx.clone();
        for (r, row) in value.data_mut().chunks_mut(d).enumerate() {
            for (o, t) in row.iter_mut().zip(vt.row(r % seq)) {
                *o += t;
            }
        }
        let needs = self.needs(x) || self.needs(table);
        Ok(self.push(value, Op::AddTiled(x, table, seq), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.same_shape(vb) {
            return Err(Error::dim("elementwise product of different shapes"));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(va.shape(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), needs))
    }

    /// Elementwise product with a fixed mask (used for dropout).
    pub fn mul_const(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let vx = self.value(x);
        if mask.len() != vx.len() {
            return Err(Error::dim("mask length differs from input"));
        }
        let data = vx.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let value = Tensor::new(vx.shape(), data)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::MulConst(x, mask), needs))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let vx = self.value(x);
        let data = vx.data().iter().map(|a| a * factor).collect();
        let value = Tensor::new(vx.shape(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(value, Op::Scale(x, factor), needs)
    }

    /// Per-column affine map `x * scale + shift` with constant coefficients.
    pub fn scale_shift_cols(&mut self, x: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let vx = self.value(x);
        let n = vx.cols();
        if scale.len() != n || shift.len() != n {
            return Err(Error::dim("column affine coefficients do not match"));
        }
        let mut value = vx.clone();
        for row in value.data_mut().chunks_mut(n) {
            for ((o, s), t) in row.iter_mut().zip(scale).zip(shift) {
                *o = *o * s + t;
            }
        }
        let needs = self.needs(x);
        Ok(self.push(value, Op::ScaleShiftCols(x, scale.to_vec()), needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let data = vx.data().iter().map(|a| a.max(0.0)).collect();
        let value = Tensor::new(vx.shape(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(value, Op::Relu(x), needs)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&a| gelu(a).0).collect();
        let value = Tensor::new(vx.shape(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(value, Op::Gelu(x), needs)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let data = vx.data().iter().map(|a| a * a).collect();
        let value = Tensor::new(vx.shape(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(value, Op::Square(x), needs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let needs = self.needs(x);
        self.push(value, Op::Sum(x), needs)
    }

    /// Softmax over the last axis.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        let n = value.cols();
        for row in value.data_mut().chunks_mut(n) {
            softmax_in_place(row);
        }
        let needs = self.needs(x);
        self.push(value, Op::SoftmaxRows(x), needs)
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let vx = self.value(x);
        let n = vx.cols();
        if self.value(gamma).len() != n || self.value(beta).len() != n {
            return Err(Error::dim("layer norm parameters do not match width"));
        }
        let (out, normalized, inv_std) =
            layer_norm_rows(vx, self.value(gamma).data(), self.value(beta).data());
        let value = out;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            needs,
        ))
    }

    /// Multi-head causal self-attention on packed `[batch*seq, d]` projections.
    /// The output is the head-wise context concatenated back to width `d`.
    pub fn causal_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
    ) -> Result<Var> {
        let (value, probs) = causal_attention(self.value(q), self.value(k), self.value(v), shape)?;
        let needs = self.needs(q) || self.needs(k) || self.needs(v);
        Ok(self.push(
            value,
            Op::CausalAttention {
                q,
                k,
                v,
                shape,
                probs,
            },
            needs,
        ))
    }

    /// Attention probabilities recorded by a [`Tape::causal_attention`] node.
    pub fn attention_probs(&self, node: Var) -> Option<&[f64]> {
        match &self.nodes[node.0].op {
            Op::CausalAttention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Mean of squared differences over every element.
    pub fn mse_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let vp = self.value(pred);
        if !vp.same_shape(target) {
            return Err(Error::dim(format!(
                "prediction {:?} vs target {:?}",
                vp.shape(),
                target.shape()
            )));
        }
        let n = vp.len() as f64;
        let loss = vp
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        let needs = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::MseLoss(pred, target.clone()),
            needs,
        ))
    }

    /// Backpropagates from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(&node.op, &node.value, &g, &mut grads)?;
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(
        &self,
        op: &Op,
        out: &Tensor,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(g.data(), vb.data(), &mut da, m, n, k);
                    self.accumulate(grads, *a, Tensor::new(va.shape(), da)?);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(va.data(), g.data(), &mut db, k, m, n);
                    self.accumulate(grads, *b, Tensor::new(vb.shape(), db)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if self.needs(*bias) {
                    let n = g.cols();
                    let mut db = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (d, r) in db.iter_mut().zip(row) {
                            *d += r;
                        }
                    }
                    let shape = self.value(*bias).shape().to_vec();
                    self.accumulate(grads, *bias, Tensor::new(&shape, db)?);
                }
            }
            Op::AddTiled(x, table, seq) => {
                let seq = *seq;
                self.accumulate(grads, *x, g.clone());
                if self.needs(*table) {
                    let vt = self.value(*table);
                    let d = vt.cols();
                    let mut dt = Tensor::zeros(vt.shape());
                    for (r, row) in g.data().chunks(d).enumerate() {
                        let t = r % seq;
                        for (o, v) in dt.data_mut()[t * d..(t + 1) * d].iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *table, dt);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let d = g.data().iter().zip(vb.data()).map(|(g, y)| g * y).collect();
                    self.accumulate(grads, *a, Tensor::new(va.shape(), d)?);
                }
                if self.needs(*b) {
                    let d = g.data().iter().zip(va.data()).map(|(g, x)| g * x).collect();
                    self.accumulate(grads, *b, Tensor::new(vb.shape(), d)?);
                }
            }
            Op::MulConst(x, mask) => {
                let d = g.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                self.accumulate(grads, *x, Tensor::new(g.shape(), d)?);
            }
            Op::Scale(x, f) => {
                let d = g.data().iter().map(|g| g * f).collect();
                self.accumulate(grads, *x, Tensor::new(g.shape(), d)?);
            }
            Op::ScaleShiftCols(x, scale) => {
                let n = scale.len();
                let mut d = g.clone();
                for row in d.data_mut().chunks_mut(n) {
                    for (o, s) in row.iter_mut().zip(scale) {
                        *o *= s;
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::Relu(x) => {
                let vx = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(vx.data())
                    .map(|(g, a)| if *a > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(g.shape(), d)?);
            }
            Op::Gelu(x) => {
                let vx = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(vx.data())
                    .map(|(g, &a)| g * gelu(a).1)
                    .collect();
                self.accumulate(grads, *x, Tensor::new(g.shape(), d)?);
            }
            Op::Square(x) => {
                let vx = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(vx.data())
                    .map(|(g, a)| 2.0 * g * a)
                    .collect();
                self.accumulate(grads, *x, Tensor::new(g.shape(), d)?);
            }
            Op::Sum(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, Tensor::full(&shape, g.data()[0]));
            }
            Op::SoftmaxRows(x) => {
                let n = out.cols();
                let mut d = Vec::with_capacity(out.len());
                for (p, gr) in out.data().chunks(n).zip(g.data().chunks(n)) {
                    let inner = dot(p, gr);
                    d.extend(p.iter().zip(gr).map(|(p, g)| p * (g - inner)));
                }
                self.accumulate(grads, *x, Tensor::new(out.shape(), d)?);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let n = out.cols();
                let gam = self.value(*gamma).data();
                if self.needs(*gamma) || self.needs(*beta) {
                    let mut dg = vec![0.0; n];
                    let mut db = vec![0.0; n];
                    for (xh, gr) in normalized.chunks(n).zip(g.data().chunks(n)) {
                        for j in 0..n {
                            dg[j] += gr[j] * xh[j];
                            db[j] += gr[j];
                        }
                    }
                    let gs = self.value(*gamma).shape().to_vec();
                    let bs = self.value(*beta).shape().to_vec();
                    self.accumulate(grads, *gamma, Tensor::new(&gs, dg)?);
                    self.accumulate(grads, *beta, Tensor::new(&bs, db)?);
                }
                if self.needs(*x) {
                    let mut dx = Vec::with_capacity(out.len());
                    let nf = n as f64;
                    for ((xh, gr), inv) in normalized.chunks(n).zip(g.data().chunks(n)).zip(inv_std)
                    {
                        let mut sum_dxh = 0.0;
                        let mut sum_dxh_xh = 0.0;
                        for j in 0..n {
                            let dxh = gr[j] * gam[j];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh[j];
                        }
                        for j in 0..n {
                            let dxh = gr[j] * gam[j];
                            dx.push(inv / nf * (nf * dxh - sum_dxh - xh[j] * sum_dxh_xh));
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(out.shape(), dx)?);
                }
            }
            Op::CausalAttention {
                q,
                k,
                v,
                shape,
                probs,
            } => {
                let (dq, dk, dv) = self.attention_backward(*q, *k, *v, *shape, probs, g)?;
                self.accumulate(grads, *q, dq);
                self.accumulate(grads, *k, dk);
                self.accumulate(grads, *v, dv);
            }
            Op::MseLoss(pred, target) => {
                let vp = self.value(*pred);
                let factor = 2.0 * g.data()[0] / vp.len() as f64;
                let d = vp
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(p, t)| factor * (p - t))
                    .collect();
                self.accumulate(grads, *pred, Tensor::new(vp.shape(), d)?);
            }
        }
        Ok(())
    }

    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        shape: AttentionShape,
        probs: &[f64],
        g: &Tensor,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        let AttentionShape { batch, seq, heads } = shape;
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        let d = vq.cols();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = vec![0.0; vq.len()];
        let mut dk = vec![0.0; vk.len()];
        let mut dv = vec![0.0; vv.len()];
        let (qd, kd, vd, gd) = (vq.data(), vk.data(), vv.data(), g.data());
        let mut dp = vec![0.0; seq];
        for b in 0..batch {
            for h in 0..heads {
                let col = h * dh;
                for i in 0..seq {
                    let p = &probs[((b * heads + h) * seq + i) * seq..][..seq];
                    let gi = &gd[(b * seq + i) * d + col..][..dh];
                    let mut weighted = 0.0;
                    for j in 0..=i {
                        let vj = &vd[(b * seq + j) * d + col..][..dh];
                        dp[j] = dot(gi, vj);
                        weighted += p[j] * dp[j];
                        let dvj = &mut dv[(b * seq + j) * d + col..][..dh];
                        for (o, &gv) in dvj.iter_mut().zip(gi) {
                            *o += p[j] * gv;
                        }
                    }
                    let qi_off = (b * seq + i) * d + col;
                    for j in 0..=i {
                        let ds = p[j] * (dp[j] - weighted) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let kj_off = (b * seq + j) * d + col;
                        for t in 0..dh {
                            dq[qi_off + t] += ds * kd[kj_off + t];
                            dk[kj_off + t] += ds * qd[qi_off + t];
                        }
                    }
                }
            }
        }
        Ok((
            Tensor::new(vq.shape(), dq)?,
            Tensor::new(vk.shape(), dk)?,
            Tensor::new(vv.shape(), dv)?,
        ))
    }
}
