//! Wengert-list reverse-mode autodiff.
//!
//! Every operation appends a node holding its forward value and enough
//! information to run its vector-Jacobian product. Nodes only reference
//! earlier nodes, so a single reverse sweep from the loss visits each
//! operation exactly once.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{Scalar, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active.
    Train,
    /// Dropout is the identity.
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows = 0,
    Cols = 1,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, T),
    AddConst(Var),
    Sum(Var),
    SumN(Vec<Var>),
    Mean(Var, Axis),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, T),
    Elu(Var, T),
    Softmax(Var, Axis),
    SegmentSoftmax { input: Var, segments: Vec<usize> },
    Dropout { input: Var, mask: Vec<T> },
    Concat(Vec<Var>, Axis),
    SliceCols { input: Var, start: usize },
    Reshape(Var),
    Transpose(Var),
    Gather { table: Var, indices: Vec<usize> },
    ScatterAdd { input: Var, indices: Vec<usize> },
    NormalizeL1(Var),
    BceWithLogits { logits: Var, targets: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a computation for one forward/backward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    mode: Mode,
    rng: ChaCha8Rng,
}

/// Gradients of a scalar loss with respect to every `requires_grad` leaf.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `var`, or `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<T>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

fn dims2<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(shape_err(op, format!("expected rank-2 tensor, got {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Tape { nodes: Vec::new(), mode, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn eval() -> Self {
        Self::new(Mode::Eval, 0)
    }

    pub fn mode(&self) -> Mode {
        self.mode
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{:?} vs {:?}", sa, sb)));
        }
        Ok(())
    }

    fn map(&mut self, name: &'static str, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var> {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(name, out, op, &[a])
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(name, out, op, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2("matmul", self.value(a))?;
        let (k2, n) = dims2("matmul", self.value(b))?;
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m},{k}] x [{k2},{n}]")));
        }
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let xv = x[i * k + p];
                if xv == T::zero() {
                    continue;
                }
                let yrow = &y[p * n..(p + 1) * n];
                for (o, &yv) in orow.iter_mut().zip(yrow) {
                    *o = *o + xv * yv;
                }
            }
        }
        let out = Tensor::new(vec![m, n], out)?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, Op::Add(a, b), |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, Op::Sub(a, b), |p, q| p - q)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, Op::Mul(a, b), |p, q| p * q)
    }

    /// `[m, n] + [1, n]`, the row broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = dims2("add_row", self.value(a))?;
        if self.value(row).shape() != [1, n] {
            return Err(shape_err("add_row", format!("[{m},{n}] + {:?}", self.value(row).shape())));
        }
        let r = self.value(row).data();
        let data = self.value(a).data().iter().enumerate().map(|(i, &v)| v + r[i % n]).collect();
        let out = Tensor::new(vec![m, n], data)?;
        self.push("add_row", out, Op::AddRow(a, row), &[a, row])
    }

    /// `[m, n] * [m, 1]`, each row scaled by its own coefficient.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (m, n) = dims2("mul_col", self.value(a))?;
        if self.value(col).shape() != [m, 1] {
            return Err(shape_err("mul_col", format!("[{m},{n}] * {:?}", self.value(col).shape())));
        }
        let c = self.value(col).data();
        let data = self.value(a).data().iter().enumerate().map(|(i, &v)| v * c[i / n]).collect();
        let out = Tensor::new(vec![m, n], data)?;
        self.push("mul_col", out, Op::MulCol(a, col), &[a, col])
    }

    /// Multiply every element of `a` by the single-element tensor `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(shape_err("mul_scalar", format!("scalar operand has shape {:?}", self.value(s).shape())));
        }
        let k = self.value(s).data()[0];
        let x = self.value(a);
        let out = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| v * k).collect())?;
        self.push("mul_scalar", out, Op::MulScalar(a, s), &[a, s])
    }

    pub fn scale(&mut self, a: Var, k: T) -> Result<Var> {
        self.map("scale", a, Op::Scale(a, k), |v| v * k)
    }

    pub fn add_const(&mut self, a: Var, k: T) -> Result<Var> {
        self.map("add_const", a, Op::AddConst(a), |v| v + k)
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let neg = self.scale(a, -T::one())?;
        self.add_const(neg, T::one())
    }

    /// Sum of all elements, as a `[1]` tensor. Sequential over the flat index.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().fold(T::zero(), |acc, &v| acc + v);
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Elementwise sum of same-shape tensors.
    pub fn sum_n(&mut self, vars: &[Var]) -> Result<Var> {
        let first = *vars.first().ok_or_else(|| shape_err("sum_n", "no operands".into()))?;
        let shape = self.value(first).shape().to_vec();
        let mut acc = vec![T::zero(); self.value(first).numel()];
        for &v in vars {
            if self.value(v).shape() != shape.as_slice() {
                return Err(shape_err("sum_n", format!("{:?} vs {:?}", shape, self.value(v).shape())));
            }
            for (a, &x) in acc.iter_mut().zip(self.value(v).data()) {
                *a = *a + x;
            }
        }
        let out = Tensor::new(shape, acc)?;
        self.push("sum_n", out, Op::SumN(vars.to_vec()), vars)
    }

    /// Mean over one axis of a matrix; the reduced axis is kept with size 1.
    pub fn mean(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let (m, n) = dims2("mean", self.value(a))?;
        let x = self.value(a).data();
        let out = match axis {
            Axis::Rows => {
                let mut acc = vec![T::zero(); n];
                for i in 0..m {
                    for j in 0..n {
                        acc[j] = acc[j] + x[i * n + j];
                    }
                }
                let k = T::of(m as f64);
                Tensor::new(vec![1, n], acc.into_iter().map(|v| v / k).collect())?
            }
            Axis::Cols => {
                let k = T::of(n as f64);
                let data = (0..m)
                    .map(|i| x[i * n..(i + 1) * n].iter().fold(T::zero(), |s, &v| s + v) / k)
                    .collect();
                Tensor::new(vec![m, 1], data)?
            }
        };
        self.push("mean", out, Op::Mean(a, axis), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map("sigmoid", a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map("tanh", a, Op::Tanh(a), |v| v.tanh())
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var> {
        self.map("leaky_relu", a, Op::LeakyRelu(a, slope), |v| if v > T::zero() { v } else { v * slope })
    }

    pub fn elu(&mut self, a: Var, alpha: T) -> Result<Var> {
        self.map("elu", a, Op::Elu(a, alpha), |v| if v > T::zero() { v } else { alpha * (v.exp() - T::one()) })
    }

    /// Softmax along `axis` of a matrix (`Cols`: each row sums to 1).
    pub fn softmax(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let (m, n) = dims2("softmax", self.value(a))?;
        let x = self.value(a).data();
        let mut out = vec![T::zero(); m * n];
        let (outer, inner, stride_o, stride_i) = match axis {
            Axis::Cols => (m, n, n, 1),
            Axis::Rows => (n, m, 1, n),
        };
        for o in 0..outer {
            let idx = |k: usize| o * stride_o + k * stride_i;
            let mx = (0..inner).map(|k| x[idx(k)]).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for k in 0..inner {
                let e = (x[idx(k)] - mx).exp();
                out[idx(k)] = e;
                z = z + e;
            }
            for k in 0..inner {
                out[idx(k)] = out[idx(k)] / z;
            }
        }
        let out = Tensor::new(vec![m, n], out)?;
        self.push("softmax", out, Op::Softmax(a, axis), &[a])
    }

    /// Softmax of an `[e, 1]` column within groups: entries sharing a
    /// segment id are normalized together. `n_segments` bounds the ids.
    pub fn segment_softmax(&mut self, a: Var, segments: &[usize], n_segments: usize) -> Result<Var> {
        let x = self.value(a);
        if x.shape() != [segments.len(), 1] {
            return Err(shape_err("segment_softmax", format!("{:?} for {} segment ids", x.shape(), segments.len())));
        }
        if let Some(&bad) = segments.iter().find(|&&s| s >= n_segments) {
            return Err(Error::IndexOutOfRange { index: bad, size: n_segments });
        }
        let x = x.data();
        let mut mx = vec![T::neg_infinity(); n_segments];
        for (&s, &v) in segments.iter().zip(x) {
            mx[s] = mx[s].max(v);
        }
        let mut z = vec![T::zero(); n_segments];
        let mut out: Vec<T> = segments.iter().zip(x).map(|(&s, &v)| (v - mx[s]).exp()).collect();
        for (&s, &e) in segments.iter().zip(&out) {
            z[s] = z[s] + e;
        }
        for (o, &s) in out.iter_mut().zip(segments) {
            *o = *o / z[s];
        }
        let out = Tensor::new(vec![segments.len(), 1], out)?;
        self.push("segment_softmax", out, Op::SegmentSoftmax { input: a, segments: segments.to_vec() }, &[a])
    }

    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`.
    pub fn dropout(&mut self, a: Var, p: f64) -> Result<Var> {
        if self.mode == Mode::Eval || p <= 0.0 {
            return Ok(a);
        }
        if p >= 1.0 {
            return Err(Error::InvalidConfig(format!("dropout probability {p} not in [0, 1)")));
        }
        let keep = T::of(1.0 / (1.0 - p));
        let n = self.value(a).numel();
        let mask: Vec<T> = (0..n)
            .map(|_| if self.rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let x = self.value(a);
        let data = x.data().iter().zip(&mask).map(|(&v, &k)| v * k).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("dropout", out, Op::Dropout { input: a, mask }, &[a])
    }

    pub fn concat(&mut self, vars: &[Var], axis: Axis) -> Result<Var> {
        if vars.is_empty() {
            return Err(shape_err("concat", "no operands".into()));
        }
        let dims: Vec<(usize, usize)> =
            vars.iter().map(|&v| dims2("concat", self.value(v))).collect::<Result<_>>()?;
        let out = match axis {
            Axis::Rows => {
                let n = dims[0].1;
                if dims.iter().any(|d| d.1 != n) {
                    return Err(shape_err("concat", format!("column counts differ: {:?}", dims)));
                }
                let mut data = Vec::new();
                for &v in vars {
                    data.extend_from_slice(self.value(v).data());
                }
                let m = dims.iter().map(|d| d.0).sum();
                Tensor::new(vec![m, n], data)?
            }
            Axis::Cols => {
                let m = dims[0].0;
                if dims.iter().any(|d| d.0 != m) {
                    return Err(shape_err("concat", format!("row counts differ: {:?}", dims)));
                }
                let n: usize = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(m * n);
                for i in 0..m {
                    for &v in vars {
                        data.extend_from_slice(self.value(v).row_slice(i));
                    }
                }
                Tensor::new(vec![m, n], data)?
            }
        };
        self.push("concat", out, Op::Concat(vars.to_vec(), axis), vars)
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = dims2("slice_cols", self.value(a))?;
        if start >= end || end > n {
            return Err(shape_err("slice_cols", format!("{start}..{end} of {n} columns")));
        }
        let x = self.value(a);
        let mut data = Vec::with_capacity(m * (end - start));
        for i in 0..m {
            data.extend_from_slice(&x.row_slice(i)[start..end]);
        }
        let out = Tensor::new(vec![m, end - start], data)?;
        self.push("slice_cols", out, Op::SliceCols { input: a, start }, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        self.push("reshape", out, Op::Reshape(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = dims2("transpose", self.value(a))?;
        let x = self.value(a).data();
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = x[i * n + j];
            }
        }
        let out = Tensor::new(vec![n, m], data)?;
        self.push("transpose", out, Op::Transpose(a), &[a])
    }

    /// Row lookup: output row `r` is `table[indices[r]]`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (m, n) = dims2("gather", self.value(table))?;
        if indices.is_empty() {
            return Err(shape_err("gather", "empty index list".into()));
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            if i >= m {
                return Err(Error::IndexOutOfRange { index: i, size: m });
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::new(vec![indices.len(), n], data)?;
        self.push("gather", out, Op::Gather { table, indices: indices.to_vec() }, &[table])
    }

    /// Adds row `r` of `a` into output row `indices[r]` of an `[n_rows, cols]` zero matrix.
    pub fn scatter_add(&mut self, a: Var, indices: &[usize], n_rows: usize) -> Result<Var> {
        let (m, n) = dims2("scatter_add", self.value(a))?;
        if m != indices.len() {
            return Err(shape_err("scatter_add", format!("{m} rows for {} indices", indices.len())));
        }
        let x = self.value(a);
        let mut data = vec![T::zero(); n_rows * n];
        for (r, &dst) in indices.iter().enumerate() {
            if dst >= n_rows {
                return Err(Error::IndexOutOfRange { index: dst, size: n_rows });
            }
            for (o, &v) in data[dst * n..(dst + 1) * n].iter_mut().zip(x.row_slice(r)) {
                *o = *o + v;
            }
        }
        let out = Tensor::new(vec![n_rows, n], data)?;
        self.push("scatter_add", out, Op::ScatterAdd { input: a, indices: indices.to_vec() }, &[a])
    }

    /// `a / max(1, ‖a‖₁)`.
    pub fn normalize_l1(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let norm = x.data().iter().fold(T::zero(), |s, &v| s + v.abs()).max(T::one());
        let out = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| v / norm).collect())?;
        self.push("normalize_l1", out, Op::NormalizeL1(a), &[a])
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against 0/1 targets,
    /// computed in the overflow-free logit form.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        let x = self.value(logits);
        if x.numel() != targets.len() || targets.is_empty() {
            return Err(shape_err("bce", format!("{} logits vs {} targets", x.numel(), targets.len())));
        }
        let n = T::of(targets.len() as f64);
        let total = x.data().iter().zip(targets).fold(T::zero(), |acc, (&z, &y)| {
            acc + z.max(T::zero()) - z * y + (T::one() + (-z.abs()).exp()).ln()
        });
        let out = Tensor::scalar(total / n);
        self.push("bce", out, Op::BceWithLogits { logits, targets: targets.to_vec() }, &[logits])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        if !root.requires_grad {
            return Err(Error::Detached);
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[id].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.propagate(node, &g, &mut grads);
        }
        // Only leaves keep their gradients.
        for (id, slot) in grads.iter_mut().enumerate() {
            if !matches!(self.nodes[id].op, Op::Leaf) {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let y = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let n = self.value(*b).shape()[1];
                let (x, w) = (val(*a), val(*b));
                if let Some(da) = self.slot(grads, *a) {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let wrow = &w[p * n..(p + 1) * n];
                            let s = grow.iter().zip(wrow).fold(T::zero(), |s, (&gv, &wv)| s + gv * wv);
                            da[i * k + p] = da[i * k + p] + s;
                        }
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let xv = x[i * k + p];
                            if xv == T::zero() {
                                continue;
                            }
                            for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d = *d + xv * gv;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.slot(grads, v) {
                        accumulate(d, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.slot(grads, *a) {
                    accumulate(d, g);
                }
                if let Some(d) = self.slot(grads, *b) {
                    for (d, &gv) in d.iter_mut().zip(g) {
                        *d = *d - gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (val(*a), val(*b));
                if let Some(d) = self.slot(grads, *a) {
                    for i in 0..d.len() {
                        d[i] = d[i] + g[i] * xb[i];
                    }
                }
                if let Some(d) = self.slot(grads, *b) {
                    for i in 0..d.len() {
                        d[i] = d[i] + g[i] * xa[i];
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(d) = self.slot(grads, *a) {
                    accumulate(d, g);
                }
                if let Some(d) = self.slot(grads, *row) {
                    let n = d.len();
                    for (i, &gv) in g.iter().enumerate() {
                        d[i % n] = d[i % n] + gv;
                    }
                }
            }
            Op::MulCol(a, col) => {
                let n = self.value(*a).cols();
                let (xa, c) = (val(*a), val(*col));
                if let Some(d) = self.slot(grads, *a) {
                    for i in 0..d.len() {
                        d[i] = d[i] + g[i] * c[i / n];
                    }
                }
                if let Some(d) = self.slot(grads, *col) {
                    for (i, &gv) in g.iter().enumerate() {
                        d[i / n] = d[i / n] + gv * xa[i];
                    }
                }
            }
            Op::MulScalar(a, s) => {
                let (xa, k) = (val(*a), val(*s)[0]);
                if let Some(d) = self.slot(grads, *a) {
                    for i in 0..d.len() {
                        d[i] = d[i] + g[i] * k;
                    }
                }
                if let Some(d) = self.slot(grads, *s) {
                    d[0] = d[0] + g.iter().zip(xa).fold(T::zero(), |acc, (&gv, &xv)| acc + gv * xv);
                }
            }
            Op::Scale(a, k) => {
                if let Some(d) = self.slot(grads, *a) {
                    for i in 0..d.len() {
                        d[i] = d[i] + g[i] * *k;
                    }
                }
            }
            Op::AddConst(a) | Op::Reshape(a) => {
                if let Some(d) = self.slot(grads, *a) {
                    accumulate(d, g);
                }
            }
            Op::Sum(a) => {
                if let Some(d) = self.slot(grads, *a) {
                    for v in d.iter_mut() {
                        *v = *v + g[0];
                    }
                }
            }
            Op::SumN(vars) => {
                for &v in vars {
                    if let Some(d) = self.slot(grads, v) {
                        accumulate(d, g);
                    }
                }
            }
            Op::Mean(a, axis) => {
                let (m, n) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                if let Some(d) = self.slot(grads, *a) {
                    match axis {
                        Axis::Rows => {
                            let k = T::of(m as f64);
                            for i in 0..m * n {
                                d[i] = d[i] + g[i % n] / k;
                            }
                        }
                        Axis::Cols => {
                            let k = T::of(n as f64);
                            for i in 0..m * n {
                                d[i] = d[i] + g[i / n] / k;
                            }
                        }
                    }
                }
            }
            Op::Sigmoid(a) => self.unary(grads, *a, g, |i| y[i] * (T::one() - y[i])),
            Op::Tanh(a) => self.unary(grads, *a, g, |i| T::one() - y[i] * y[i]),
            Op::LeakyRelu(a, slope) => {
                let x = val(*a);
                self.unary(grads, *a, g, |i| if x[i] > T::zero() { T::one() } else { *slope })
            }
            Op::Elu(a, alpha) => {
                let x = val(*a);
                self.unary(grads, *a, g, |i| if x[i] > T::zero() { T::one() } else { y[i] + *alpha })
            }
            Op::Softmax(a, axis) => {
                let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                let (outer, inner, so, si) = match axis {
                    Axis::Cols => (m, n, n, 1),
                    Axis::Rows => (n, m, 1, n),
                };
                if let Some(d) = self.slot(grads, *a) {
                    for o in 0..outer {
                        let idx = |k: usize| o * so + k * si;
                        let dot = (0..inner).fold(T::zero(), |s, k| s + g[idx(k)] * y[idx(k)]);
                        for k in 0..inner {
                            d[idx(k)] = d[idx(k)] + y[idx(k)] * (g[idx(k)] - dot);
                        }
                    }
                }
            }
            Op::SegmentSoftmax { input, segments } => {
                if let Some(d) = self.slot(grads, *input) {
                    let n_seg = segments.iter().copied().max().map_or(0, |s| s + 1);
                    let mut dot = vec![T::zero(); n_seg];
                    for (i, &s) in segments.iter().enumerate() {
                        dot[s] = dot[s] + g[i] * y[i];
                    }
                    for (i, &s) in segments.iter().enumerate() {
                        d[i] = d[i] + y[i] * (g[i] - dot[s]);
                    }
                }
            }
            Op::Dropout { input, mask } => self.unary(grads, *input, g, |i| mask[i]),
            Op::Concat(vars, axis) => match axis {
                Axis::Rows => {
                    let mut off = 0;
                    for &v in vars {
                        let len = self.value(v).numel();
                        if let Some(d) = self.slot(grads, v) {
                            accumulate(d, &g[off..off + len]);
                        }
                        off += len;
                    }
                }
                Axis::Cols => {
                    let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                    let mut off = 0;
                    for &v in vars {
                        let w = self.value(v).shape()[1];
                        if let Some(d) = self.slot(grads, v) {
                            for i in 0..m {
                                accumulate(&mut d[i * w..(i + 1) * w], &g[i * n + off..i * n + off + w]);
                            }
                        }
                        off += w;
                    }
                }
            },
            Op::SliceCols { input, start } => {
                let n = self.value(*input).shape()[1];
                let (m, w) = (node.value.shape()[0], node.value.shape()[1]);
                if let Some(d) = self.slot(grads, *input) {
                    for i in 0..m {
                        accumulate(&mut d[i * n + start..i * n + start + w], &g[i * w..(i + 1) * w]);
                    }
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                if let Some(d) = self.slot(grads, *a) {
                    for i in 0..m {
                        for j in 0..n {
                            d[i * n + j] = d[i * n + j] + g[j * m + i];
                        }
                    }
                }
            }
            Op::Gather { table, indices } => {
                let n = self.value(*table).shape()[1];
                if let Some(d) = self.slot(grads, *table) {
                    for (r, &src) in indices.iter().enumerate() {
                        accumulate(&mut d[src * n..(src + 1) * n], &g[r * n..(r + 1) * n]);
                    }
                }
            }
            Op::ScatterAdd { input, indices } => {
                let n = node.value.shape()[1];
                if let Some(d) = self.slot(grads, *input) {
                    for (r, &dst) in indices.iter().enumerate() {
                        accumulate(&mut d[r * n..(r + 1) * n], &g[dst * n..(dst + 1) * n]);
                    }
                }
            }
            Op::NormalizeL1(a) => {
                let x = val(*a);
                let s = x.iter().fold(T::zero(), |s, &v| s + v.abs());
                if let Some(d) = self.slot(grads, *a) {
                    if s <= T::one() {
                        accumulate(d, g);
                    } else {
                        // d(x_i/s)/dx_k = δ_ik/s - x_i·sign(x_k)/s²
                        let gy = g.iter().zip(x).fold(T::zero(), |acc, (&gv, &xv)| acc + gv * xv);
                        for k in 0..d.len() {
                            let sign = if x[k] > T::zero() {
                                T::one()
                            } else if x[k] < T::zero() {
                                -T::one()
                            } else {
                                T::zero()
                            };
                            d[k] = d[k] + g[k] / s - gy * sign / (s * s);
                        }
                    }
                }
            }
            Op::BceWithLogits { logits, targets } => {
                let x = val(*logits);
                let n = T::of(targets.len() as f64);
                if let Some(d) = self.slot(grads, *logits) {
                    for i in 0..d.len() {
                        d[i] = d[i] + g[0] * (sigmoid(x[i]) - targets[i]) / n;
                    }
                }
            }
        }
    }

    fn unary(&self, grads: &mut [Option<Vec<T>>], a: Var, g: &[T], local: impl Fn(usize) -> T) {
        if let Some(d) = self.slot(grads, a) {
            for i in 0..d.len() {
                d[i] = d[i] + g[i] * local(i);
            }
        }
    }
}

fn accumulate<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_is_noop() {
        let mut tape = Tape::<f64>::eval();
        let a = tape.constant(t(2, 3, &[1.0, -2.0, 3.5, 0.25, 7.0, -1.0]));
        let i = tape.constant(Tensor::identity(3));
        let c = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(c), tape.value(a));
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::<f64>::eval();
        let x = tape.constant(t(1, 3, &[2.5, 2.5, 2.5]));
        let s = tape.softmax(x, Axis::Cols).unwrap();
        for &v in tape.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut tape = Tape::<f64>::eval();
        let x = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(s).data()[0], 0.5);
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::<f64>::eval();
        let x = tape.param(t(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn grad_of_square() {
        let mut tape = Tape::<f64>::eval();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_detached() {
        let mut tape = Tape::<f64>::eval();
        let x = tape.param(t(1, 2, &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
        let c = tape.constant(Tensor::scalar(1.0));
        let y = tape.scale(c, 2.0).unwrap();
        assert_eq!(tape.backward(y).err(), Some(Error::Detached));
    }

    #[test]
    fn shape_mismatch_and_non_finite_are_errors() {
        let mut tape = Tape::<f64>::eval();
        let a = tape.constant(t(2, 3, &[0.0; 6]));
        let b = tape.constant(t(2, 3, &[0.0; 6]));
        assert!(matches!(tape.matmul(a, b), Err(Error::ShapeMismatch { .. })));
        let big = tape.constant(Tensor::scalar(f64::MAX));
        assert!(matches!(tape.scale(big, 10.0), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn dropout_identity_in_eval() {
        let mut tape = Tape::<f64>::eval();
        let a = tape.constant(t(1, 4, &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(tape.dropout(a, 0.5).unwrap(), a);
    }

    #[test]
    fn dropout_rate_and_scaling() {
        let p = 0.5;
        let n = 100_000;
        let mut tape = Tape::<f64>::new(Mode::Train, 7);
        let a = tape.constant(Tensor::full(vec![1, n], 1.0));
        let d = tape.dropout(a, p).unwrap();
        let out = tape.value(d).data();
        let zeros = out.iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
        assert!((zeros - p).abs() < 0.02, "zero fraction {zeros}");
        assert!(out.iter().all(|&v| v == 0.0 || (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn segment_softmax_singleton_is_one() {
        let mut tape = Tape::<f64>::eval();
        let e = tape.constant(t(3, 1, &[0.3, -4.0, 2.0]));
        let s = tape.segment_softmax(e, &[0, 1, 1], 3).unwrap();
        let v = tape.value(s).data();
        assert_eq!(v[0], 1.0);
        assert!((v[1] + v[2] - 1.0).abs() < 1e-15);
        assert!(tape.segment_softmax(e, &[0, 1, 5], 3).is_err());
    }

    #[test]
    fn gather_out_of_range() {
        let mut tape = Tape::<f64>::eval();
        let a = tape.constant(t(2, 2, &[0.0; 4]));
        assert_eq!(tape.gather(a, &[2]).err(), Some(Error::IndexOutOfRange { index: 2, size: 2 }));
    }
}
