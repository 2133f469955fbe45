//! Reverse-mode differentiation over a recorded tape of dense kernels.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Operations
//! return a [`Var`] handle; [`Tape::backward`] walks the tape in reverse and
//! returns [`Gradients`] for every node that depends on a parameter or a
//! differentiable input. Every kernel rejects non-finite output.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::dim_err;
use crate::param::{ParamId, ParamStore};
use crate::tensor::axis_strides;
use crate::{Error, Real, Result, Rng, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, Real),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, inv_std: Vec<Real> },
    Dropout { x: Var, mask: Vec<Real> },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    MeanAxis { x: Var, axis: usize },
    MaxAxis { x: Var, argmax: Vec<usize> },
    Sum(Var),
    BceWithLogits { x: Var, targets: Vec<Real> },
    Bce { x: Var, targets: Vec<Real> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside [`Tape::binary_cross_entropy`].
pub const BCE_CLAMP: Real = 1e-12;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: Vec<(ParamId, Var)>,
}

fn check_finite(t: &Tensor, op: &'static str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

fn matmul_into(a: &[Real], b: &[Real], out: &mut [Real], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub fn sigmoid(z: Real) -> Real {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; no gradient is tracked for it.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        check_finite(&t, "constant")?;
        Ok(self.push(t, Op::Leaf, false))
    }

    /// Differentiable input (used by gradient checks against inputs).
    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        check_finite(&t, "input")?;
        Ok(self.push(t, Op::Leaf, true))
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.param_vars.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param, true);
        self.param_vars.push((id, v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(dim_err!("matmul inner dimensions {} and {} differ", k, k2));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        check_finite(&t, "matmul")?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transpose2()?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Transpose(a), rg))
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err!("{}: shapes {:?} and {:?} differ", op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        check_finite(&t, "add")?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        check_finite(&t, "mul")?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// `a[.., j] + row[j]`, broadcasting `row` (length = last axis of `a`).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let n = *self.shape(a).last().ok_or_else(|| dim_err!("add_row on a scalar"))?;
        if self.value(row).len() != n {
            return Err(dim_err!("add_row: row of {} values for last axis {}", self.value(row).len(), n));
        }
        let r = self.value(row).data();
        let data = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + r[i % n])
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        check_finite(&t, "add_row")?;
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(t, Op::AddRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, k: Real) -> Result<Var> {
        let t = self.value(a).scale(k);
        check_finite(&t, "scale")?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Scale(a, k), rg))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(a);
        Ok(self.push(t, Op::Relu(a), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        Ok(self.push(t, Op::Sigmoid(a), rg))
    }

    /// Row-wise softmax over the last axis, stabilized by the row maximum.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let n = *shape.last().ok_or_else(|| dim_err!("softmax of a scalar"))?;
        if n == 0 {
            return Err(dim_err!("softmax over an empty row"));
        }
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().copied().fold(Real::neg_infinity(), Real::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let t = Tensor::new(shape, out)?;
        check_finite(&t, "softmax_rows")?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::SoftmaxRows(a), rg))
    }

    /// Normalize every vector along the last axis to zero mean, unit variance.
    pub fn layer_norm(&mut self, a: Var, eps: Real) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let d = *shape.last().ok_or_else(|| dim_err!("layer_norm of a scalar"))?;
        if d < 2 {
            return Err(dim_err!("layer_norm needs at least 2 channels, got {}", d));
        }
        let mut out = self.value(a).data().to_vec();
        let mut inv_std = Vec::with_capacity(out.len() / d);
        for row in out.chunks_mut(d) {
            let mean = row.iter().sum::<Real>() / d as Real;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / d as Real;
            let inv = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let t = Tensor::new(shape, out)?;
        check_finite(&t, "layer_norm")?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::LayerNorm { x: a, inv_std }, rg))
    }

    /// Inverted dropout. Identity in eval mode or when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: Real, rng: &mut Rng, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(alloc::format!("dropout rate {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<Real> = (0..self.value(a).len())
            .map(|_| if rng.uniform() < p { 0.0 } else { keep })
            .collect();
        let data = self.value(a).data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Dropout { x: a, mask }, rg))
    }

    /// Concatenate along `axis`; all other axes must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| dim_err!("concat of nothing"))?;
        let base = self.shape(*first).to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (x, y))| i != axis && x != y) {
                return Err(dim_err!("concat: shape {:?} incompatible with {:?} on axis {}", s, base, axis));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_strides(&base, axis)?;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let t = Tensor::new(shape, out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            t,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Sub-range `start..start + len` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (outer, n, inner) = axis_strides(&shape, axis)?;
        if start + len > n {
            return Err(dim_err!("slice {}..{} out of axis length {}", start, start + len, n));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut s = shape;
        s[axis] = len;
        let t = Tensor::new(s, out)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Slice { x: a, axis, start }, rg))
    }

    /// Split into consecutive pieces of the given sizes along `axis`.
    pub fn split(&mut self, a: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let n = *self.shape(a).get(axis).ok_or_else(|| dim_err!("split axis {} out of range", axis))?;
        if sizes.iter().sum::<usize>() != n {
            return Err(dim_err!("split sizes {:?} do not cover axis length {}", sizes, n));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &len in sizes {
            out.push(self.slice(a, axis, start, len)?);
            start += len;
        }
        Ok(out)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Mean pooling along `axis`, keeping it with length 1.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let mut shape = self.shape(a).to_vec();
        let (outer, n, inner) = axis_strides(&shape, axis)?;
        if n == 0 {
            return Err(dim_err!("mean over an empty axis"));
        }
        let src = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += src[(o * n + k) * inner + i];
                }
            }
        }
        for v in &mut out {
            *v /= n as Real;
        }
        shape[axis] = 1;
        let t = Tensor::new(shape, out)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::MeanAxis { x: a, axis }, rg))
    }

    /// Max pooling along `axis`, keeping it with length 1. Ties go to the first index.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let mut shape = self.shape(a).to_vec();
        let (outer, n, inner) = axis_strides(&shape, axis)?;
        if n == 0 {
            return Err(dim_err!("max over an empty axis"));
        }
        let src = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = (o * n) * inner + i;
                for k in 1..n {
                    let idx = (o * n + k) * inner + i;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                out[o * inner + i] = src[best];
                argmax[o * inner + i] = best;
            }
        }
        shape[axis] = 1;
        let t = Tensor::new(shape, out)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::MaxAxis { x: a, argmax }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum::<Real>();
        let t = Tensor::scalar(s);
        check_finite(&t, "sum")?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Sum(a), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(dim_err!("mean of an empty tensor"));
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as Real)
    }

    fn check_targets(&self, a: Var, targets: &[Real]) -> Result<()> {
        if targets.len() != self.value(a).len() {
            return Err(dim_err!("{} targets for {} predictions", targets.len(), self.value(a).len()));
        }
        Ok(())
    }

    /// Elementwise binary cross-entropy of logits against targets in `[0, 1]`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[Real]) -> Result<Var> {
        self.check_targets(logits, targets)?;
        let data = self
            .value(logits)
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .collect();
        let t = Tensor::new(self.shape(logits).to_vec(), data)?;
        check_finite(&t, "bce_with_logits")?;
        let rg = self.rg(logits);
        Ok(self.push(
            t,
            Op::BceWithLogits {
                x: logits,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Elementwise binary cross-entropy of probabilities against targets.
    pub fn binary_cross_entropy(&mut self, probs: Var, targets: &[Real]) -> Result<Var> {
        self.check_targets(probs, targets)?;
        let data = self
            .value(probs)
            .data()
            .iter()
            .zip(targets)
            .map(|(&p, &y)| {
                let p = p.max(BCE_CLAMP).min(1.0 - BCE_CLAMP);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .collect();
        let t = Tensor::new(self.shape(probs).to_vec(), data)?;
        check_finite(&t, "binary_cross_entropy")?;
        let rg = self.rg(probs);
        Ok(self.push(
            t,
            Op::Bce {
                x: probs,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Gradients of the scalar `loss` with respect to every tracked node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(dim_err!("backward needs a scalar loss, got shape {:?}", self.shape(loss)));
        }
        let mut grads: Vec<Option<Vec<Real>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            param_vars: self.param_vars.clone(),
        })
    }

    fn propagate(&self, node: &Node, g: &[Real], grads: &mut [Option<Vec<Real>>]) -> Result<()> {
        let out = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2()?;
                let n = self.value(*b).dims2()?.1;
                if self.rg(*a) {
                    // dA = dOut * B^T
                    let bt = self.value(*b).transpose2()?;
                    let mut da = vec![0.0; m * k];
                    matmul_into(g, bt.data(), &mut da, m, n, k);
                    accumulate(grads, *a, &da);
                }
                if self.rg(*b) {
                    // dB = A^T * dOut
                    let at = self.value(*a).transpose2()?;
                    let mut db = vec![0.0; k * n];
                    matmul_into(at.data(), g, &mut db, k, m, n);
                    accumulate(grads, *b, &db);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = node.value.dims2()?;
                let gt = Tensor::new(vec![r, c], g.to_vec())?.transpose2()?;
                accumulate(grads, *a, gt.data());
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let ga: Vec<Real> = g.iter().zip(bv).map(|(g, b)| g * b).collect();
                let gb: Vec<Real> = g.iter().zip(av).map(|(g, a)| g * a).collect();
                accumulate(grads, *a, &ga);
                accumulate(grads, *b, &gb);
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g);
                let n = self.value(*row).len();
                let mut gr = vec![0.0; n];
                for (i, v) in g.iter().enumerate() {
                    gr[i % n] += v;
                }
                accumulate(grads, *row, &gr);
            }
            Op::Scale(a, k) => {
                let ga: Vec<Real> = g.iter().map(|v| v * k).collect();
                accumulate(grads, *a, &ga);
            }
            Op::Relu(a) => {
                let ga: Vec<Real> = g.iter().zip(out).map(|(g, y)| if *y > 0.0 { *g } else { 0.0 }).collect();
                accumulate(grads, *a, &ga);
            }
            Op::Sigmoid(a) => {
                let ga: Vec<Real> = g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect();
                accumulate(grads, *a, &ga);
            }
            Op::SoftmaxRows(a) => {
                let n = *node.value.shape().last().unwrap_or(&1);
                let mut ga = vec![0.0; g.len()];
                for ((gr, yr), dst) in g.chunks(n).zip(out.chunks(n)).zip(ga.chunks_mut(n)) {
                    let dot: Real = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    for ((d, g), y) in dst.iter_mut().zip(gr).zip(yr) {
                        *d = y * (g - dot);
                    }
                }
                accumulate(grads, *a, &ga);
            }
            Op::LayerNorm { x, inv_std } => {
                let d = *node.value.shape().last().unwrap_or(&1);
                let dn = d as Real;
                let mut ga = vec![0.0; g.len()];
                for (r, ((gr, yr), dst)) in g.chunks(d).zip(out.chunks(d)).zip(ga.chunks_mut(d)).enumerate() {
                    let sum_g: Real = gr.iter().sum();
                    let sum_gy: Real = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    for ((dv, gv), yv) in dst.iter_mut().zip(gr).zip(yr) {
                        *dv = inv_std[r] / dn * (dn * gv - sum_g - yv * sum_gy);
                    }
                }
                accumulate(grads, *x, &ga);
            }
            Op::Dropout { x, mask } => {
                let ga: Vec<Real> = g.iter().zip(mask).map(|(g, m)| g * m).collect();
                accumulate(grads, *x, &ga);
            }
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = axis_strides(node.value.shape(), *axis)?;
                let total = node.value.shape()[*axis];
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    let mut gp = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        gp.extend_from_slice(&g[base..base + len * inner]);
                    }
                    accumulate(grads, p, &gp);
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, n, inner) = axis_strides(self.shape(*x), *axis)?;
                let len = node.value.shape()[*axis];
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    let src = o * len * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                accumulate(grads, *x, &gx);
            }
            Op::Reshape(a) => accumulate(grads, *a, g),
            Op::MeanAxis { x, axis } => {
                let (outer, n, inner) = axis_strides(self.shape(*x), *axis)?;
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for k in 0..n {
                        for i in 0..inner {
                            gx[(o * n + k) * inner + i] = g[o * inner + i] / n as Real;
                        }
                    }
                }
                accumulate(grads, *x, &gx);
            }
            Op::MaxAxis { x, argmax, .. } => {
                let mut gx = vec![0.0; self.value(*x).len()];
                for (src, gv) in argmax.iter().zip(g) {
                    gx[*src] += gv;
                }
                accumulate(grads, *x, &gx);
            }
            Op::Sum(a) => {
                let ga = vec![g[0]; self.value(*a).len()];
                accumulate(grads, *a, &ga);
            }
            Op::BceWithLogits { x, targets } => {
                let ga: Vec<Real> = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(targets)
                    .zip(g)
                    .map(|((&z, &y), gv)| gv * (sigmoid(z) - y))
                    .collect();
                accumulate(grads, *x, &ga);
            }
            Op::Bce { x, targets } => {
                let ga: Vec<Real> = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(targets)
                    .zip(g)
                    .map(|((&p, &y), gv)| {
                        let p = p.max(BCE_CLAMP).min(1.0 - BCE_CLAMP);
                        gv * (p - y) / (p * (1.0 - p))
                    })
                    .collect();
                accumulate(grads, *x, &ga);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<Real>>], v: Var, g: &[Real]) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<Real>>>,
    param_vars: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or `None` if `v` does not reach it.
    pub fn get(&self, v: Var) -> Option<&[Real]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Add `scale * dLoss/dParam` into every parameter's accumulator.
    /// Parameters the loss does not reach are left untouched.
    pub fn accumulate_into(&self, store: &mut ParamStore, scale: Real) {
        for &(id, var) in &self.param_vars {
            if let Some(g) = self.get(var) {
                for (acc, v) in store.get_mut(id).grad.data_mut().iter_mut().zip(g) {
                    *acc += scale * v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[Real]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<Real> {
        let (m, k) = a.dims2().unwrap();
        let n = b.dims2().unwrap().1;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.at2(i, p) * b.at2(p, j);
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = rng.normal(0.0, 1.0);
        }
        t
    }

    #[test]
    fn matmul_identity_and_basis() {
        let mut tape = Tape::new();
        let i2 = tape.constant(Tensor::eye(2)).unwrap();
        let m = tape.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
        let p = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

        let row = tape.constant(mat(&[&[1.0, 0.0]])).unwrap();
        let col = tape.constant(mat(&[&[5.0], &[7.0]])).unwrap();
        let s = tape.matmul(row, col).unwrap();
        assert_eq!(tape.value(s).data(), &[5.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng::new(11);
        let a = random(&[3, 4], &mut rng);
        let b = random(&[4, 2], &mut rng);
        let mut tape = Tape::new();
        let va = tape.constant(a.clone()).unwrap();
        let vb = tape.constant(b.clone()).unwrap();
        let p = tape.matmul(va, vb).unwrap();
        for (x, y) in tape.value(p).data().iter().zip(naive_matmul(&a, &b)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        assert!(matches!(tape.matmul(a, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let z = tape.constant(mat(&[&[0.0, 0.0, 0.0]])).unwrap();
        let s = tape.softmax_rows(z).unwrap();
        for v in tape.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let one = tape.constant(mat(&[&[42.0]])).unwrap();
        let s1 = tape.softmax_rows(one).unwrap();
        assert_eq!(tape.value(s1).data(), &[1.0]);

        let x = tape.constant(mat(&[&[1.0, 2.0, 3.0]])).unwrap();
        let sx = tape.softmax_rows(x).unwrap();
        let denom = 1.0f64.exp() + 2.0f64.exp() + 3.0f64.exp();
        let expect = [1.0f64.exp() / denom, 2.0f64.exp() / denom, 3.0f64.exp() / denom];
        for (a, b) in tape.value(sx).data().iter().zip(expect) {
            assert!((a - b as Real).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rejects_empty_rows() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros(&[2, 0])).unwrap();
        assert!(matches!(tape.softmax_rows(z), Err(Error::Dimension(_))));
    }

    #[test]
    fn layer_norm_examples() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::vector(vec![5.0; 4])).unwrap();
        let n = tape.layer_norm(c, 1e-5).unwrap();
        assert!(tape.value(n).data().iter().all(|v| *v == 0.0));

        let mut rng = Rng::new(5);
        let x = random(&[1, 16], &mut rng);
        let vx = tape.constant(x).unwrap();
        let y = tape.layer_norm(vx, 1e-5).unwrap();
        let out = tape.value(y).data();
        let mean = out.iter().sum::<Real>() / 16.0;
        let var = out.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / 16.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4, "var {var}");

        // already normalized input is a fixed point up to the eps shrinkage
        let again = tape.layer_norm(y, 1e-12).unwrap();
        for (a, b) in tape.value(again).data().iter().zip(tape.value(y).data()) {
            assert!((a - b).abs() < 1e-4);
        }

        let short = tape.constant(Tensor::vector(vec![1.0])).unwrap();
        assert!(matches!(tape.layer_norm(short, 1e-5), Err(Error::Dimension(_))));
    }

    #[test]
    fn layer_norm_unit_variance_with_tiny_eps() {
        let mut rng = Rng::new(9);
        let mut tape = Tape::new();
        let x = tape.constant(random(&[3, 8], &mut rng)).unwrap();
        let y = tape.layer_norm(x, 0.0).unwrap();
        for row in tape.value(y).data().chunks(8) {
            let mean = row.iter().sum::<Real>() / 8.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / 8.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn dropout_modes() {
        let mut tape = Tape::new();
        let mut rng = Rng::new(1);
        let x = tape.constant(Tensor::full(&[100], 2.0)).unwrap();
        assert_eq!(tape.dropout(x, 0.0, &mut rng, true).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.5, &mut rng, false).unwrap(), x);
        assert!(matches!(tape.dropout(x, 1.0, &mut rng, true), Err(Error::Parameter(_))));
        assert!(matches!(tape.dropout(x, -0.1, &mut rng, true), Err(Error::Parameter(_))));
    }

    #[test]
    fn dropout_zero_fraction_is_close_to_rate() {
        let n = 100_000;
        let mut tape = Tape::new();
        let mut rng = Rng::new(2024);
        let x = tape.constant(Tensor::full(&[n], 1.0)).unwrap();
        let y = tape.dropout(x, 0.5, &mut rng, true).unwrap();
        let zeros = tape.value(y).data().iter().filter(|v| **v == 0.0).count();
        let frac = zeros as Real / n as Real;
        assert!((0.49..=0.51).contains(&frac), "zero fraction {frac}");
        assert!(tape.value(y).data().iter().all(|v| *v == 0.0 || *v == 2.0));
    }

    #[test]
    fn dropout_is_reproducible() {
        let run = || {
            let mut tape = Tape::new();
            let mut rng = Rng::new(77);
            let x = tape.constant(Tensor::full(&[64], 1.5)).unwrap();
            let y = tape.dropout(x, 0.2, &mut rng, true).unwrap();
            tape.value(y).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn linear_backward_matches_hand_formula() {
        // loss = sum(W x) with x fixed: dW[i][j] = x[j]
        let mut store = ParamStore::new();
        let w = store.add("w", mat(&[&[1.0, -2.0, 0.5], &[0.3, 0.7, -1.1]])).unwrap();
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let x = tape.constant(mat(&[&[2.0], &[3.0], &[-4.0]])).unwrap();
        let y = tape.matmul(wv, x).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(wv).unwrap(), &[2.0, 3.0, -4.0, 2.0, 3.0, -4.0]);
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn unreachable_parameter_keeps_zero_grad() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let b = store.add("b", Tensor::vector(vec![3.0, 4.0])).unwrap();
        let mut tape = Tape::new();
        let av = tape.param(&store, a);
        let _bv = tape.param(&store, b);
        let loss = tape.sum(av).unwrap();
        tape.backward(loss).unwrap().accumulate_into(&mut store, 1.0);
        assert_eq!(store.get(a).grad.data(), &[1.0, 1.0]);
        assert_eq!(store.get(b).grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(&[2])).unwrap();
        assert!(matches!(tape.backward(x), Err(Error::Dimension(_))));
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![Real::MAX, Real::MAX])).unwrap();
        assert!(matches!(tape.add(x, x), Err(Error::NonFinite(_))));
        assert!(tape.constant(Tensor::vector(vec![Real::NAN])).is_err());
    }

    #[test]
    fn concat_split_inverse() {
        let mut rng = Rng::new(3);
        let mut tape = Tape::new();
        let a = tape.constant(random(&[2, 3, 4], &mut rng)).unwrap();
        let parts = tape.split(a, 1, &[1, 2]).unwrap();
        let back = tape.concat(&parts, 1).unwrap();
        assert_eq!(tape.value(back), tape.value(a));
    }

    #[test]
    fn pooling_along_axes() {
        let mut tape = Tape::new();
        let x = tape
            .constant(Tensor::new(vec![2, 3], vec![1.0, 5.0, 3.0, 4.0, 2.0, 6.0]).unwrap())
            .unwrap();
        let m0 = tape.max_axis(x, 0).unwrap();
        assert_eq!(tape.value(m0).data(), &[4.0, 5.0, 6.0]);
        assert_eq!(tape.shape(m0), &[1, 3]);
        let m1 = tape.mean_axis(x, 1).unwrap();
        assert_eq!(tape.value(m1).data(), &[3.0, 4.0]);
    }

    #[test]
    fn bce_matches_formula() {
        let mut tape = Tape::new();
        let z = tape.input(Tensor::vector(vec![-2.0, 0.0, 3.0])).unwrap();
        let p = tape.sigmoid(z).unwrap();
        let y = [0.0, 1.0, 1.0];
        let a = tape.bce_with_logits(z, &y).unwrap();
        let b = tape.binary_cross_entropy(p, &y).unwrap();
        for (x, w) in tape.value(a).data().iter().zip(tape.value(b).data()) {
            assert!((x - w).abs() < 1e3 * Real::EPSILON);
        }
    }
}
