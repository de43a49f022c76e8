use std::cell::{Cell, Ref, RefCell};

use super::kernels::MatmulPlan;
use super::{transpose_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul(Var, Var, MatmulPlan),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Abs(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    SoftmaxRows(Var),
    Standardize { x: Var, eps: f64 },
    AddBias(Var, Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Transpose(Var),
    Reshape(Var),
    Repeat { x: Var, axis: usize, count: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Abs(_) => "abs",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::Standardize { .. } => "standardize",
            Op::AddBias(..) => "add_bias",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Repeat { .. } => "repeat",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, so every node's inputs precede it
/// and [`Tape::backward`] can walk the list in reverse. A tape is
/// single-threaded; build a fresh one per forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    first_non_finite: Cell<Option<(usize, &'static str)>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or `None` when `v` does
    /// not influence the loss through differentiable ops.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(&self.shapes[v.0], g.clone()).expect("gradient shape"))
    }

    /// Gradient of `v`, zeros when it did not reach the loss.
    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        self.get(v)
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

#[inline]
fn bcast(data: &[f64], i: usize) -> f64 {
    if data.len() == 1 {
        data[0]
    } else {
        data[i]
    }
}

#[inline]
fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    /// First op (node index, op name) that produced a NaN or infinity.
    /// Leaves are not checked; a non-finite leaf is reported at the first
    /// op that consumes it.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.first_non_finite.get()
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        let is_leaf = matches!(op, Op::Leaf);
        if !is_leaf && self.first_non_finite.get().is_none() && !value.is_finite() {
            self.first_non_finite.set(Some((id, op.name())));
        }
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(id)
    }

    fn requires(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// Trainable leaf: gradients are accumulated for it.
    pub fn param(&self, value: &Tensor) -> Var {
        self.push(value.clone(), Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (out, plan) = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let plan = MatmulPlan::new(ta.shape(), tb.shape())?;
            let mut out = vec![0.0; plan.out_numel()];
            plan.forward(ta.data(), tb.data(), &mut out);
            (Tensor::new(&plan.out_shape, out)?, plan)
        };
        Ok(self.push(out, Op::Matmul(a, b, plan), self.requires(&[a, b])))
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let nodes = self.nodes.borrow();
        let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
        let shape = if ta.shape() == tb.shape() || tb.numel() == 1 {
            ta.shape()
        } else if ta.numel() == 1 {
            tb.shape()
        } else {
            return Err(Error::shape(op, ta.shape(), tb.shape()));
        };
        let n = numel(shape);
        let (da, db) = (ta.data(), tb.data());
        let data = (0..n).map(|i| f(bcast(da, i), bcast(db, i))).collect();
        Tensor::new(shape, data)
    }

    /// Elementwise sum; either side may be a single-element tensor.
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), self.requires(&[a, b])))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), self.requires(&[a, b])))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), self.requires(&[a, b])))
    }

    fn unary(&self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.nodes.borrow()[x.0].value.map(f);
        let rg = self.requires(&[x]);
        self.push(out, op, rg)
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), stable_sigmoid)
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn abs(&self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), f64::abs)
    }

    pub fn scale(&self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn add_scalar(&self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    /// `c - x`, elementwise.
    pub fn rsub_scalar(&self, c: f64, x: Var) -> Var {
        let neg = self.scale(x, -1.0);
        self.add_scalar(neg, c)
    }

    pub fn sum(&self, x: Var) -> Var {
        let s = self.nodes.borrow()[x.0].value.sum();
        let rg = self.requires(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&self, x: Var) -> Var {
        let m = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            t.sum() / t.numel() as f64
        };
        let rg = self.requires(&[x]);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax_rows(&self, x: Var) -> Var {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            let c = *t.shape().last().expect("rank >= 1");
            let mut data = t.data().to_vec();
            for row in data.chunks_exact_mut(c) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    z += *v;
                }
                for v in row.iter_mut() {
                    *v /= z;
                }
            }
            Tensor::new(t.shape(), data).expect("softmax shape")
        };
        let rg = self.requires(&[x]);
        self.push(out, Op::SoftmaxRows(x), rg)
    }

    /// Standardize each row of the last axis to zero mean and unit
    /// population standard deviation. The divisor is `max(std, eps)`, so a
    /// constant row maps to zeros.
    pub fn standardize_rows(&self, x: Var, eps: f64) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            let c = *t.shape().last().expect("rank >= 1");
            if c < 2 {
                return Err(Error::contract("standardize needs rows of length >= 2"));
            }
            let mut data = t.data().to_vec();
            for row in data.chunks_exact_mut(c) {
                let (mean, denom) = row_stats(row, eps);
                for v in row.iter_mut() {
                    *v = (*v - mean) / denom;
                }
            }
            Tensor::new(t.shape(), data)?
        };
        let rg = self.requires(&[x]);
        Ok(self.push(out, Op::Standardize { x, eps }, rg))
    }

    /// `x + b` where `b` is a vector matching the last axis of `x`.
    pub fn add_bias(&self, x: Var, b: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (tx, tb) = (&nodes[x.0].value, &nodes[b.0].value);
            let q = *tx.shape().last().expect("rank >= 1");
            if tb.numel() != q || tb.ndim() != 1 {
                return Err(Error::shape("add_bias", tx.shape(), tb.shape()));
            }
            let mut data = tx.data().to_vec();
            for row in data.chunks_exact_mut(q) {
                for (v, bv) in row.iter_mut().zip(tb.data()) {
                    *v += bv;
                }
            }
            Tensor::new(tx.shape(), data)?
        };
        Ok(self.push(out, Op::AddBias(x, b), self.requires(&[x, b])))
    }

    pub fn concat(&self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::contract("concat of zero tensors"));
        }
        let out = {
            let nodes = self.nodes.borrow();
            let first = nodes[inputs[0].0].value.shape().to_vec();
            if axis >= first.len() {
                return Err(Error::shape("concat", &first, &[axis]));
            }
            let mut total = 0;
            for v in inputs {
                let s = nodes[v.0].value.shape();
                if s.len() != first.len()
                    || s.iter()
                        .zip(&first)
                        .enumerate()
                        .any(|(d, (a, b))| d != axis && a != b)
                {
                    return Err(Error::shape("concat", &first, s));
                }
                total += s[axis];
            }
            let outer: usize = first[..axis].iter().product();
            let tail: usize = first[axis + 1..].iter().product();
            let mut shape = first.clone();
            shape[axis] = total;
            let mut data = Vec::with_capacity(numel(&shape));
            for o in 0..outer {
                for v in inputs {
                    let t = &nodes[v.0].value;
                    let chunk = t.shape()[axis] * tail;
                    data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            Tensor::new(&shape, data)?
        };
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            self.requires(inputs),
        ))
    }

    pub fn slice(&self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            let s = t.shape();
            if axis >= s.len() || len == 0 || start + len > s[axis] {
                return Err(Error::shape("slice", s, &[axis, start, len]));
            }
            let outer: usize = s[..axis].iter().product();
            let tail: usize = s[axis + 1..].iter().product();
            let mut shape = s.to_vec();
            shape[axis] = len;
            let mut data = Vec::with_capacity(numel(&shape));
            for o in 0..outer {
                let base = o * s[axis] * tail + start * tail;
                data.extend_from_slice(&t.data()[base..base + len * tail]);
            }
            Tensor::new(&shape, data)?
        };
        let rg = self.requires(&[x]);
        Ok(self.push(out, Op::Slice { x, axis, start }, rg))
    }

    /// Swap the last two axes.
    pub fn transpose(&self, x: Var) -> Result<Var> {
        let out = self.nodes.borrow()[x.0].value.transpose()?;
        let rg = self.requires(&[x]);
        Ok(self.push(out, Op::Transpose(x), rg))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.nodes.borrow()[x.0].value.reshape(shape)?;
        let rg = self.requires(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Insert a new axis at `axis` holding `count` copies of `x`.
    pub fn repeat(&self, x: Var, axis: usize, count: usize) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            let s = t.shape();
            if axis > s.len() || count == 0 {
                return Err(Error::shape("repeat", s, &[axis, count]));
            }
            let outer: usize = s[..axis].iter().product();
            let inner: usize = s[axis..].iter().product();
            let mut shape = s[..axis].to_vec();
            shape.push(count);
            shape.extend_from_slice(&s[axis..]);
            let mut data = Vec::with_capacity(outer * count * inner);
            for o in 0..outer {
                let src = &t.data()[o * inner..(o + 1) * inner];
                for _ in 0..count {
                    data.extend_from_slice(src);
                }
            }
            Tensor::new(&shape, data)?
        };
        let rg = self.requires(&[x]);
        Ok(self.push(out, Op::Repeat { x, axis, count }, rg))
    }

    /// Reverse-mode sweep from a scalar `loss`, visiting nodes in exact
    /// reverse creation order. Gradients from shared subexpressions are
    /// summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if loss.0 >= nodes.len() {
            return Err(Error::contract("loss is not on this tape"));
        }
        if nodes[loss.0].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                grads[id] = Some(g);
                continue;
            }
            let y = node.value.data();
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
                f(slot);
            };
            match &node.op {
                Op::Leaf => {}
                Op::Matmul(a, b, plan) => {
                    let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    acc(*a, &mut |da| plan.backward_lhs(&g, vb, da));
                    acc(*b, &mut |db| plan.backward_rhs(&g, va, db));
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) {
                        -1.0
                    } else {
                        1.0
                    };
                    acc(*a, &mut |da| reduce_into(da, &g, |_, gi| gi));
                    acc(*b, &mut |db| reduce_into(db, &g, |_, gi| sign * gi));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    acc(*a, &mut |da| reduce_into(da, &g, |i, gi| gi * bcast(vb, i)));
                    acc(*b, &mut |db| reduce_into(db, &g, |i, gi| gi * bcast(va, i)));
                }
                Op::Sigmoid(x) => acc(*x, &mut |dx| {
                    for ((d, gi), yi) in dx.iter_mut().zip(&g).zip(y) {
                        *d += gi * yi * (1.0 - yi);
                    }
                }),
                Op::Tanh(x) => acc(*x, &mut |dx| {
                    for ((d, gi), yi) in dx.iter_mut().zip(&g).zip(y) {
                        *d += gi * (1.0 - yi * yi);
                    }
                }),
                Op::Relu(x) | Op::Abs(x) => {
                    let xv = nodes[x.0].value.data();
                    let is_abs = matches!(node.op, Op::Abs(_));
                    acc(*x, &mut |dx| {
                        for ((d, gi), xi) in dx.iter_mut().zip(&g).zip(xv) {
                            let slope = if *xi > 0.0 {
                                1.0
                            } else if is_abs && *xi < 0.0 {
                                -1.0
                            } else {
                                0.0
                            };
                            *d += gi * slope;
                        }
                    })
                }
                Op::Scale(x, c) => acc(*x, &mut |dx| {
                    for (d, gi) in dx.iter_mut().zip(&g) {
                        *d += gi * c;
                    }
                }),
                Op::AddScalar(x) | Op::Reshape(x) => acc(*x, &mut |dx| {
                    for (d, gi) in dx.iter_mut().zip(&g) {
                        *d += gi;
                    }
                }),
                Op::Sum(x) => acc(*x, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0])),
                Op::Mean(x) => {
                    let n = nodes[x.0].value.numel() as f64;
                    acc(*x, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0] / n))
                }
                Op::SoftmaxRows(x) => {
                    let c = *node.value.shape().last().unwrap();
                    acc(*x, &mut |dx| {
                        for ((dr, gr), yr) in dx
                            .chunks_exact_mut(c)
                            .zip(g.chunks_exact(c))
                            .zip(y.chunks_exact(c))
                        {
                            let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                            for ((d, gi), yi) in dr.iter_mut().zip(gr).zip(yr) {
                                *d += yi * (gi - dot);
                            }
                        }
                    })
                }
                Op::Standardize { x, eps } => {
                    let c = *node.value.shape().last().unwrap();
                    let xv = nodes[x.0].value.data();
                    acc(*x, &mut |dx| {
                        for (((dr, gr), yr), xr) in dx
                            .chunks_exact_mut(c)
                            .zip(g.chunks_exact(c))
                            .zip(y.chunks_exact(c))
                            .zip(xv.chunks_exact(c))
                        {
                            let (_, denom) = row_stats(xr, *eps);
                            let clamped = population_std(xr) <= *eps;
                            let n = c as f64;
                            let gmean = gr.iter().sum::<f64>() / n;
                            let gy = if clamped {
                                0.0
                            } else {
                                gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n
                            };
                            for ((d, gi), yi) in dr.iter_mut().zip(gr).zip(yr) {
                                *d += (gi - gmean - yi * gy) / denom;
                            }
                        }
                    })
                }
                Op::AddBias(x, b) => {
                    let q = nodes[b.0].value.numel();
                    acc(*x, &mut |dx| {
                        for (d, gi) in dx.iter_mut().zip(&g) {
                            *d += gi;
                        }
                    });
                    acc(*b, &mut |db| {
                        for row in g.chunks_exact(q) {
                            for (d, gi) in db.iter_mut().zip(row) {
                                *d += gi;
                            }
                        }
                    });
                }
                Op::Concat { inputs, axis } => {
                    let shape = node.value.shape();
                    let outer: usize = shape[..*axis].iter().product();
                    let tail: usize = shape[axis + 1..].iter().product();
                    let row = shape[*axis] * tail;
                    let mut offset = 0;
                    for v in inputs {
                        let chunk = nodes[v.0].value.shape()[*axis] * tail;
                        acc(*v, &mut |dv| {
                            for o in 0..outer {
                                let src = &g[o * row + offset..o * row + offset + chunk];
                                for (d, gi) in dv[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                    *d += gi;
                                }
                            }
                        });
                        offset += chunk;
                    }
                }
                Op::Slice { x, axis, start } => {
                    let src_shape = nodes[x.0].value.shape();
                    let len = node.value.shape()[*axis];
                    let outer: usize = src_shape[..*axis].iter().product();
                    let tail: usize = src_shape[axis + 1..].iter().product();
                    acc(*x, &mut |dx| {
                        for o in 0..outer {
                            let base = o * src_shape[*axis] * tail + start * tail;
                            let src = &g[o * len * tail..(o + 1) * len * tail];
                            for (d, gi) in dx[base..base + len * tail].iter_mut().zip(src) {
                                *d += gi;
                            }
                        }
                    })
                }
                Op::Transpose(x) => {
                    let s = nodes[x.0].value.shape();
                    let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                    let mut back = vec![0.0; g.len()];
                    transpose_into(&g, &mut back, c, r);
                    acc(*x, &mut |dx| {
                        for (d, gi) in dx.iter_mut().zip(&back) {
                            *d += gi;
                        }
                    })
                }
                Op::Repeat { x, axis, count } => {
                    let s = nodes[x.0].value.shape();
                    let inner: usize = s[*axis..].iter().product();
                    acc(*x, &mut |dx| {
                        for (o, dst) in dx.chunks_exact_mut(inner).enumerate() {
                            for k in 0..*count {
                                let base = (o * count + k) * inner;
                                for (d, gi) in dst.iter_mut().zip(&g[base..base + inner]) {
                                    *d += gi;
                                }
                            }
                        }
                    })
                }
            }
            // Leaves keep their gradient for the caller.
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }

        let shapes = nodes[..=loss.0]
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }
}

fn population_std(row: &[f64]) -> f64 {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    (row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    (mean, population_std(row).max(eps))
}

/// Add `f(i, g[i])` into `dst`, summing over all of `g` when `dst` is a
/// broadcast scalar.
fn reduce_into(dst: &mut [f64], g: &[f64], f: impl Fn(usize, f64) -> f64) {
    if dst.len() == 1 && g.len() != 1 {
        dst[0] += g.iter().enumerate().map(|(i, &gi)| f(i, gi)).sum::<f64>();
    } else {
        for (i, (d, &gi)) in dst.iter_mut().zip(g).enumerate() {
            *d += f(i, gi);
        }
    }
}
