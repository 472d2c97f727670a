//! Tape of differentiable operations.
//!
//! A [`Graph`] records every operation of one forward pass as a node whose
//! inputs precede it, so the tape is acyclic by construction. Calling
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients
//! into the [`ParamStore`] leaves that required them.

use super::param::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Elementwise unary operations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Exp,
    Tanh,
    Sigmoid,
    Relu,
    /// `z * sigmoid(z)`
    Swish,
    Abs,
    PowInt(u32),
    Scale(f64),
    AddScalar(f64),
}

/// Elementwise binary operations. Operands must have equal shapes, or one
/// of them must hold a single value, which is broadcast.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Unary(Unary, Var),
    Binary(Binary, Var, Var),
    Matmul(Var, Var),
    Transpose(Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    BatchedMatVec { w: Var, v: Var },
    Reduce { kind: Reduce, input: Var, axis: Option<usize> },
    Slice { input: Var, start: usize },
    SliceColumns { input: Var, start: usize },
    Reshape(Var),
    ConcatColumns(Var, Var),
    SqDist { x: Var, r: Var },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Unary(..) => "unary",
            Op::Binary(..) => "binary",
            Op::Matmul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Linear { .. } => "linear",
            Op::BatchedMatVec { .. } => "batched_matvec",
            Op::Reduce { .. } => "reduce",
            Op::Slice { .. } => "slice_view",
            Op::SliceColumns { .. } => "slice_columns",
            Op::Reshape(..) => "reshape",
            Op::ConcatColumns(..) => "concat_columns",
            Op::SqDist { .. } => "sq_dist",
        }
    }
}

/// One recorded operation. The output value doubles as the saved
/// intermediate for rules such as `exp`, `tanh` and `sigmoid`.
#[derive(Clone, Debug)]
struct TapeNode {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    param: Option<ParamId>,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<TapeNode>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn check_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::invalid(format!(
            "{op} expects a rank-{rank} tensor, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

impl Graph {
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

    /// Whether gradient can reach a trainable leaf through this node.
    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(TapeNode {
            value,
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Registers a persistent parameter as a leaf of this graph.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Leaf, p.requires_grad);
        if p.requires_grad {
            self.nodes[v.0].param = Some(id);
        }
        v
    }

    // ---- elementwise -------------------------------------------------------

    pub fn unary(&mut self, kind: Unary, a: Var) -> Result<Var> {
        let x = self.value(a);
        if let Unary::PowInt(d) = kind {
            if d < 1 {
                return Err(Error::invalid("pow_int requires an exponent >= 1"));
            }
        }
        let f: Box<dyn Fn(f64) -> f64> = match kind {
            Unary::Exp => Box::new(f64::exp),
            Unary::Tanh => Box::new(f64::tanh),
            Unary::Sigmoid => Box::new(sigmoid),
            Unary::Relu => Box::new(|z: f64| if z > 0.0 { z } else { 0.0 }),
            Unary::Swish => Box::new(|z: f64| z * sigmoid(z)),
            Unary::Abs => Box::new(f64::abs),
            Unary::PowInt(d) => Box::new(move |z: f64| z.powi(d as i32)),
            Unary::Scale(c) => Box::new(move |z: f64| c * z),
            Unary::AddScalar(c) => Box::new(move |z: f64| z + c),
        };
        let data = x.data().iter().map(|&z| f(z)).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        let ng = self.requires_grad(a);
        Ok(self.push(out, Op::Unary(kind, a), ng))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Exp, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Relu, a)
    }

    pub fn swish(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Swish, a)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Abs, a)
    }

    pub fn pow_int(&mut self, a: Var, d: u32) -> Result<Var> {
        self.unary(Unary::PowInt(d), a)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(Unary::Scale(c), a)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(Unary::AddScalar(c), a)
    }

    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let f = match kind {
            Binary::Add => |p: f64, q: f64| p + q,
            Binary::Sub => |p: f64, q: f64| p - q,
            Binary::Mul => |p: f64, q: f64| p * q,
        };
        let out = if x.shape() == y.shape() {
            let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
            Tensor::from_parts(x.shape().to_vec(), data)
        } else if y.is_scalar() {
            let q = y.item();
            let data = x.data().iter().map(|&p| f(p, q)).collect();
            Tensor::from_parts(x.shape().to_vec(), data)
        } else if x.is_scalar() {
            let p = x.item();
            let data = y.data().iter().map(|&q| f(p, q)).collect();
            Tensor::from_parts(y.shape().to_vec(), data)
        } else {
            return Err(Error::shape("elementwise", x.shape(), y.shape()));
        };
        let ng = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(out, Op::Binary(kind, a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    // ---- linear algebra ----------------------------------------------------

    /// `[m×k] · [k×p] -> [m×p]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        check_rank("matmul", x, 2)?;
        check_rank("matmul", y, 2)?;
        let (m, k, p) = (x.shape()[0], x.shape()[1], y.shape()[1]);
        if y.shape()[0] != k {
            return Err(Error::shape("matmul", x.shape(), y.shape()));
        }
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            let row = &mut out[i * p..(i + 1) * p];
            for kk in 0..k {
                axpy(x.data()[i * k + kk], &y.data()[kk * p..(kk + 1) * p], row);
            }
        }
        let ng = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(Tensor::from_parts(vec![m, p], out), Op::Matmul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        check_rank("transpose", x, 2)?;
        let (r, c) = (x.shape()[0], x.shape()[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x.data()[i * c + j];
            }
        }
        let ng = self.requires_grad(a);
        Ok(self.push(Tensor::from_parts(vec![c, r], out), Op::Transpose(a), ng))
    }

    /// Affine map applied to each row: `x[B×D] · w[O×D]ᵀ + b[O] -> [B×O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        check_rank("linear", xv, 2)?;
        check_rank("linear", wv, 2)?;
        let (bsz, d, o) = (xv.shape()[0], xv.shape()[1], wv.shape()[0]);
        if wv.shape()[1] != d {
            return Err(Error::shape("linear", xv.shape(), wv.shape()));
        }
        let bias = match b {
            Some(b) => {
                let bv = self.value(b);
                if bv.shape() != [o] {
                    return Err(Error::shape("linear bias", wv.shape(), bv.shape()));
                }
                Some(bv.data())
            }
            None => None,
        };
        let mut out = vec![0.0; bsz * o];
        for r in 0..bsz {
            let xr = &xv.data()[r * d..(r + 1) * d];
            let orow = &mut out[r * o..(r + 1) * o];
            for (j, dst) in orow.iter_mut().enumerate() {
                *dst = dot(xr, &wv.data()[j * d..(j + 1) * d]) + bias.map_or(0.0, |bb| bb[j]);
            }
        }
        let ng = self.requires_grad(x)
            || self.requires_grad(w)
            || b.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(
            Tensor::from_parts(vec![bsz, o], out),
            Op::Linear { x, w, b },
            ng,
        ))
    }

    /// Per-row matrix-vector product: `w[B×R×C] · v[B×C] -> [B×R]`.
    pub fn batched_matvec(&mut self, w: Var, v: Var) -> Result<Var> {
        let (wv, vv) = (self.value(w), self.value(v));
        check_rank("batched_matvec", wv, 3)?;
        check_rank("batched_matvec", vv, 2)?;
        let (bsz, r, c) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        if vv.shape() != [bsz, c] {
            return Err(Error::shape("batched_matvec", wv.shape(), vv.shape()));
        }
        let mut out = vec![0.0; bsz * r];
        for b in 0..bsz {
            let vrow = &vv.data()[b * c..(b + 1) * c];
            let wb = &wv.data()[b * r * c..(b + 1) * r * c];
            for i in 0..r {
                out[b * r + i] = dot(&wb[i * c..(i + 1) * c], vrow);
            }
        }
        let ng = self.requires_grad(w) || self.requires_grad(v);
        Ok(self.push(
            Tensor::from_parts(vec![bsz, r], out),
            Op::BatchedMatVec { w, v },
            ng,
        ))
    }

    /// Pairwise squared Euclidean distances between the rows of
    /// `x[B×D]` and `r[N×D]`, giving `[B×N]`.
    pub fn sq_dist(&mut self, x: Var, r: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(r));
        check_rank("sq_dist", xv, 2)?;
        check_rank("sq_dist", rv, 2)?;
        let (bsz, d, n) = (xv.shape()[0], xv.shape()[1], rv.shape()[0]);
        if rv.shape()[1] != d {
            return Err(Error::shape("sq_dist", xv.shape(), rv.shape()));
        }
        let mut out = vec![0.0; bsz * n];
        for b in 0..bsz {
            let xr = &xv.data()[b * d..(b + 1) * d];
            for j in 0..n {
                let rr = &rv.data()[j * d..(j + 1) * d];
                out[b * n + j] = xr.iter().zip(rr).map(|(p, q)| (p - q) * (p - q)).sum();
            }
        }
        let ng = self.requires_grad(x) || self.requires_grad(r);
        Ok(self.push(Tensor::from_parts(vec![bsz, n], out), Op::SqDist { x, r }, ng))
    }

    // ---- reductions --------------------------------------------------------

    /// Sum or mean over all entries (`axis = None`, result shape `[1]`) or
    /// over one axis (that axis removed from the shape).
    pub fn reduce(&mut self, kind: Reduce, a: Var, axis: Option<usize>) -> Result<Var> {
        let x = self.value(a);
        let out = match axis {
            None => {
                let s: f64 = x.data().iter().sum();
                let v = match kind {
                    Reduce::Sum => s,
                    Reduce::Mean => s / x.numel() as f64,
                };
                Tensor::scalar(v)
            }
            Some(ax) => {
                if ax >= x.rank() {
                    return Err(Error::OutOfRange(format!(
                        "axis {ax} for tensor of rank {}",
                        x.rank()
                    )));
                }
                let shape = x.shape();
                let outer: usize = shape[..ax].iter().product();
                let len = shape[ax];
                let inner: usize = shape[ax + 1..].iter().product();
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for a_ in 0..len {
                        let src = &x.data()[(o * len + a_) * inner..(o * len + a_ + 1) * inner];
                        axpy(1.0, src, &mut out[o * inner..(o + 1) * inner]);
                    }
                }
                if kind == Reduce::Mean {
                    let inv = 1.0 / len as f64;
                    out.iter_mut().for_each(|v| *v *= inv);
                }
                let mut new_shape: Vec<usize> = shape[..ax].to_vec();
                new_shape.extend_from_slice(&shape[ax + 1..]);
                if new_shape.is_empty() {
                    new_shape.push(1);
                }
                Tensor::from_parts(new_shape, out)
            }
        };
        let ng = self.requires_grad(a);
        Ok(self.push(out, Op::Reduce { kind, input: a, axis }, ng))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce(Reduce::Sum, a, None)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce(Reduce::Mean, a, None)
    }

    // ---- views -------------------------------------------------------------

    /// Contiguous flat range `[start, end)` of `a`, reshaped to `new_shape`.
    pub fn slice_view(&mut self, a: Var, start: usize, end: usize, new_shape: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if start >= end || end > x.numel() {
            return Err(Error::OutOfRange(format!(
                "slice [{start}, {end}) of tensor with {} values",
                x.numel()
            )));
        }
        let out = Tensor::new(new_shape, x.data()[start..end].to_vec())
            .map_err(|_| Error::shape("slice_view", &[end - start], new_shape))?;
        let ng = self.requires_grad(a);
        Ok(self.push(out, Op::Slice { input: a, start }, ng))
    }

    /// Columns `[start, end)` of every row of a `[B×C]` tensor.
    pub fn slice_columns(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.value(a);
        check_rank("slice_columns", x, 2)?;
        let (rows, cols) = (x.shape()[0], x.shape()[1]);
        if start >= end || end > cols {
            return Err(Error::OutOfRange(format!(
                "columns [{start}, {end}) of tensor with {cols} columns"
            )));
        }
        let w = end - start;
        let mut out = Vec::with_capacity(rows * w);
        for r in 0..rows {
            out.extend_from_slice(&x.data()[r * cols + start..r * cols + end]);
        }
        let ng = self.requires_grad(a);
        Ok(self.push(
            Tensor::from_parts(vec![rows, w], out),
            Op::SliceColumns { input: a, start },
            ng,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let out = x
            .reshape(shape)
            .map_err(|_| Error::shape("reshape", x.shape(), shape))?;
        let ng = self.requires_grad(a);
        Ok(self.push(out, Op::Reshape(a), ng))
    }

    /// `[B×p] ++ [B×q] -> [B×(p+q)]`
    pub fn concat_columns(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        check_rank("concat_columns", x, 2)?;
        check_rank("concat_columns", y, 2)?;
        if x.shape()[0] != y.shape()[0] {
            return Err(Error::shape("concat_columns", x.shape(), y.shape()));
        }
        let (rows, p, q) = (x.shape()[0], x.shape()[1], y.shape()[1]);
        let mut out = Vec::with_capacity(rows * (p + q));
        for r in 0..rows {
            out.extend_from_slice(&x.data()[r * p..(r + 1) * p]);
            out.extend_from_slice(&y.data()[r * q..(r + 1) * q]);
        }
        let ng = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(
            Tensor::from_parts(vec![rows, p + q], out),
            Op::ConcatColumns(a, b),
            ng,
        ))
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse sweep from a single-value `loss`, accumulating (`+=`) into the
    /// gradient of every reachable trainable leaf of `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !self.requires_grad(loss) {
            return Err(Error::invalid(
                "loss does not depend on any trainable parameter",
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, &g, &mut grads)?;
            if let Some(id) = node.param {
                store.accumulate_grad(id, &g);
            }
        }
        Ok(())
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut [f64]> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        let n = node.value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
    }

    fn backward_node(&self, node: &TapeNode, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        match node.op {
            Op::Leaf => {}
            Op::Unary(kind, a) => {
                let x = self.value(a).data();
                let y = node.value.data();
                if let Some(ga) = self.grad_slot(grads, a) {
                    for i in 0..ga.len() {
                        let d = match kind {
                            Unary::Exp => y[i],
                            Unary::Tanh => 1.0 - y[i] * y[i],
                            Unary::Sigmoid => y[i] * (1.0 - y[i]),
                            Unary::Relu => {
                                if x[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Swish => {
                                let s = sigmoid(x[i]);
                                s + x[i] * s * (1.0 - s)
                            }
                            Unary::Abs => {
                                if x[i] > 0.0 {
                                    1.0
                                } else if x[i] < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::PowInt(d) => d as f64 * x[i].powi(d as i32 - 1),
                            Unary::Scale(c) => c,
                            Unary::AddScalar(_) => 1.0,
                        };
                        ga[i] += g[i] * d;
                    }
                }
            }
            Op::Binary(kind, a, b) => {
                let xv = self.value(a);
                let yv = self.value(b);
                let (x, y) = (xv.data(), yv.data());
                let n = g.len();
                // index helpers for scalar broadcast
                let xi = |i: usize| if x.len() == n { x[i] } else { x[0] };
                let yi = |i: usize| if y.len() == n { y[i] } else { y[0] };
                if let Some(ga) = self.grad_slot(grads, a) {
                    let bcast = ga.len() != n;
                    for i in 0..n {
                        let d = match kind {
                            Binary::Add | Binary::Sub => g[i],
                            Binary::Mul => g[i] * yi(i),
                        };
                        if bcast {
                            ga[0] += d;
                        } else {
                            ga[i] += d;
                        }
                    }
                }
                if let Some(gb) = self.grad_slot(grads, b) {
                    let bcast = gb.len() != n;
                    for i in 0..n {
                        let d = match kind {
                            Binary::Add => g[i],
                            Binary::Sub => -g[i],
                            Binary::Mul => g[i] * xi(i),
                        };
                        if bcast {
                            gb[0] += d;
                        } else {
                            gb[i] += d;
                        }
                    }
                }
            }
            Op::Matmul(a, b) => {
                let (x, y) = (self.value(a), self.value(b));
                let (m, k, p) = (x.shape()[0], x.shape()[1], y.shape()[1]);
                if let Some(ga) = self.grad_slot(grads, a) {
                    // dA = dC · Bᵀ
                    for i in 0..m {
                        let gi = &g[i * p..(i + 1) * p];
                        for kk in 0..k {
                            ga[i * k + kk] += dot(gi, &y.data()[kk * p..(kk + 1) * p]);
                        }
                    }
                }
                if let Some(gb) = self.grad_slot(grads, b) {
                    // dB = Aᵀ · dC
                    for i in 0..m {
                        let gi = &g[i * p..(i + 1) * p];
                        for kk in 0..k {
                            axpy(x.data()[i * k + kk], gi, &mut gb[kk * p..(kk + 1) * p]);
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let x = self.value(a);
                let (r, c) = (x.shape()[0], x.shape()[1]);
                if let Some(ga) = self.grad_slot(grads, a) {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(x), self.value(w));
                let (bsz, d, o) = (xv.shape()[0], xv.shape()[1], wv.shape()[0]);
                if let Some(gx) = self.grad_slot(grads, x) {
                    for r in 0..bsz {
                        let gxr = &mut gx[r * d..(r + 1) * d];
                        for j in 0..o {
                            let coef = g[r * o + j];
                            if coef != 0.0 {
                                axpy(coef, &wv.data()[j * d..(j + 1) * d], gxr);
                            }
                        }
                    }
                }
                if let Some(gw) = self.grad_slot(grads, w) {
                    for r in 0..bsz {
                        let xr = &xv.data()[r * d..(r + 1) * d];
                        for j in 0..o {
                            let coef = g[r * o + j];
                            if coef != 0.0 {
                                axpy(coef, xr, &mut gw[j * d..(j + 1) * d]);
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    if let Some(gb) = self.grad_slot(grads, b) {
                        for r in 0..bsz {
                            axpy(1.0, &g[r * o..(r + 1) * o], gb);
                        }
                    }
                }
            }
            Op::BatchedMatVec { w, v } => {
                let (wv, vv) = (self.value(w), self.value(v));
                let (bsz, r, c) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
                if let Some(gw) = self.grad_slot(grads, w) {
                    for b in 0..bsz {
                        let vrow = &vv.data()[b * c..(b + 1) * c];
                        for i in 0..r {
                            let off = (b * r + i) * c;
                            axpy(g[b * r + i], vrow, &mut gw[off..off + c]);
                        }
                    }
                }
                if let Some(gv) = self.grad_slot(grads, v) {
                    for b in 0..bsz {
                        let gvr = &mut gv[b * c..(b + 1) * c];
                        for i in 0..r {
                            let off = (b * r + i) * c;
                            axpy(g[b * r + i], &wv.data()[off..off + c], gvr);
                        }
                    }
                }
            }
            Op::SqDist { x, r } => {
                let (xv, rv) = (self.value(x), self.value(r));
                let (bsz, d, n) = (xv.shape()[0], xv.shape()[1], rv.shape()[0]);
                if let Some(gx) = self.grad_slot(grads, x) {
                    for b in 0..bsz {
                        let xr = &xv.data()[b * d..(b + 1) * d];
                        for j in 0..n {
                            let coef = 2.0 * g[b * n + j];
                            let rr = &rv.data()[j * d..(j + 1) * d];
                            for k in 0..d {
                                gx[b * d + k] += coef * (xr[k] - rr[k]);
                            }
                        }
                    }
                }
                if let Some(gr) = self.grad_slot(grads, r) {
                    for b in 0..bsz {
                        let xr = &xv.data()[b * d..(b + 1) * d];
                        for j in 0..n {
                            let coef = 2.0 * g[b * n + j];
                            let rr = &rv.data()[j * d..(j + 1) * d];
                            for k in 0..d {
                                gr[j * d + k] -= coef * (xr[k] - rr[k]);
                            }
                        }
                    }
                }
            }
            Op::Reduce { kind, input, axis } => {
                let x = self.value(input);
                if let Some(ga) = self.grad_slot(grads, input) {
                    match axis {
                        None => {
                            let s = match kind {
                                Reduce::Sum => g[0],
                                Reduce::Mean => g[0] / x.numel() as f64,
                            };
                            ga.iter_mut().for_each(|v| *v += s);
                        }
                        Some(ax) => {
                            let shape = x.shape();
                            let outer: usize = shape[..ax].iter().product();
                            let len = shape[ax];
                            let inner: usize = shape[ax + 1..].iter().product();
                            let scale = match kind {
                                Reduce::Sum => 1.0,
                                Reduce::Mean => 1.0 / len as f64,
                            };
                            for o in 0..outer {
                                let go = &g[o * inner..(o + 1) * inner];
                                for a_ in 0..len {
                                    let off = (o * len + a_) * inner;
                                    axpy(scale, go, &mut ga[off..off + inner]);
                                }
                            }
                        }
                    }
                }
            }
            Op::Slice { input, start } => {
                if let Some(ga) = self.grad_slot(grads, input) {
                    axpy(1.0, g, &mut ga[start..start + g.len()]);
                }
            }
            Op::SliceColumns { input, start } => {
                let x = self.value(input);
                let cols = x.shape()[1];
                let w = node.value.shape()[1];
                if let Some(ga) = self.grad_slot(grads, input) {
                    for r in 0..x.shape()[0] {
                        axpy(
                            1.0,
                            &g[r * w..(r + 1) * w],
                            &mut ga[r * cols + start..r * cols + start + w],
                        );
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.grad_slot(grads, a) {
                    axpy(1.0, g, ga);
                }
            }
            Op::ConcatColumns(a, b) => {
                let rows = node.value.shape()[0];
                let p = self.value(a).shape()[1];
                let q = self.value(b).shape()[1];
                if let Some(ga) = self.grad_slot(grads, a) {
                    for r in 0..rows {
                        axpy(1.0, &g[r * (p + q)..r * (p + q) + p], &mut ga[r * p..(r + 1) * p]);
                    }
                }
                if let Some(gb) = self.grad_slot(grads, b) {
                    for r in 0..rows {
                        axpy(
                            1.0,
                            &g[r * (p + q) + p..(r + 1) * (p + q)],
                            &mut gb[r * q..(r + 1) * q],
                        );
                    }
                }
            }
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient flowing through {}",
                node.op.name()
            )));
        }
        Ok(())
    }
}
