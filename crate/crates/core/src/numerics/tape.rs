//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every primitive appends one node holding its forward value and the
//! handles of its inputs. Nodes only reference earlier nodes, so walking the
//! tape backwards is a valid reverse topological order and each node is
//! visited once.

use super::tensor::{matmul_at_into, matmul_bt_into, matmul_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Relu(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SumCols(Var),
    MaxAll(Var, usize),
    Softmax(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Transpose(Var),
    GatherRows(Var, Vec<usize>),
    Propagate { adj: Var, x: Var },
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of primitive operations for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops all nodes and gradients so the tape can record a new pass.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.backward_done = false;
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("op {name}")));
        }
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(value, op, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(name, out, op, &[a, b])
    }

    fn unary(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let out = self.value(a).map(f);
        self.push(name, out, op, &[a])
    }

    fn require_2d(&self, op: &'static str, a: Var) -> Result<(usize, usize)> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::shape(op, format!("expected a matrix, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.require_2d("matmul", a)?;
        let (k2, n) = self.require_2d("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("{m}x{k} x {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let out = Tensor::new(vec![m, n], out)?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a length-`cols` bias to every row of `a`. This is the only
    /// tensor broadcast the tape accepts.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, c) = self.require_2d("add_bias", a)?;
        if self.value(bias).numel() != c || self.value(bias).rows() != 1 {
            return Err(Error::shape(
                "add_bias",
                format!("bias {:?} for matrix {:?}", self.shape(bias), self.shape(a)),
            ));
        }
        let b = self.value(bias).data();
        let x = self.value(a);
        let data = x.data().chunks(c).flat_map(|row| row.iter().zip(b).map(|(p, q)| p + q)).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("add_bias", out, Op::AddBias(a, bias), &[a, bias])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("scale", a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("add_scalar", a, Op::AddScalar(a), |x| x + c)
    }

    /// `c - a`, elementwise.
    pub fn rsub_scalar(&mut self, c: f64, a: Var) -> Result<Var> {
        let neg = self.scale(a, -1.0)?;
        self.add_scalar(neg, c)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary("log", a, Op::Log(a), f64::ln)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary("abs", a, Op::Abs(a), f64::abs)
    }

    /// `max(a, 0)` elementwise.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.sum() / t.numel() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Sum along the last axis: `r×c → r×1`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.require_2d("sum_rows", a)?;
        let data = self.value(a).data().chunks(c).map(|row| row.iter().sum()).collect();
        let out = Tensor::new(vec![r, 1], data)?;
        self.push("sum_rows", out, Op::SumRows(a), &[a])
    }

    /// Sum along the first axis: `r×c → 1×c`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let (_, c) = self.require_2d("sum_cols", a)?;
        let mut data = vec![0.0; c];
        for row in self.value(a).data().chunks(c) {
            for (o, x) in data.iter_mut().zip(row) {
                *o += x;
            }
        }
        let out = Tensor::new(vec![1, c], data)?;
        self.push("sum_cols", out, Op::SumCols(a), &[a])
    }

    /// Global maximum. The gradient goes to the first maximal element.
    pub fn max_all(&mut self, a: Var) -> Result<Var> {
        let d = self.value(a).data();
        let mut best = 0;
        for (i, &x) in d.iter().enumerate() {
            if x > d[best] {
                best = i;
            }
        }
        let v = d[best];
        self.push("max_all", Tensor::scalar(v), Op::MaxAll(a, best), &[a])
    }

    /// Softmax along the last axis of a matrix (or a 1-D vector).
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let c = t.cols();
        let mut data = Vec::with_capacity(t.numel());
        for row in t.data().chunks(c) {
            data.extend(softmax_row(row));
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        self.push("softmax", out, Op::Softmax(a), &[a])
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let c = t.cols();
        let mut data = Vec::with_capacity(t.numel());
        for row in t.data().chunks(c) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|x| x - lse));
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        self.push("log_softmax", out, Op::LogSoftmax(a), &[a])
    }

    /// Concatenates matrices with equal row counts along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let r = self.require_2d("concat", parts[0])?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.require_2d("concat", p)?;
            if pr != r {
                return Err(Error::shape("concat", format!("row counts {r} vs {pr}")));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let out = Tensor::new(vec![r, total], data)?;
        self.push("concat", out, Op::Concat(parts.to_vec()), parts)
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.require_2d("slice_cols", a)?;
        if len == 0 || start + len > c {
            return Err(Error::shape("slice_cols", format!("{start}..{} of {c} columns", start + len)));
        }
        let data = self
            .value(a)
            .data()
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let out = Tensor::new(vec![r, len], data)?;
        self.push("slice_cols", out, Op::SliceCols(a, start), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.require_2d("transpose", a)?;
        let out = self.value(a).transpose();
        self.push("transpose", out, Op::Transpose(a), &[a])
    }

    /// Row `idx[i]` of `a` becomes row `i` of the output.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.require_2d("gather_rows", a)?;
        if idx.is_empty() {
            return Err(Error::shape("gather_rows", "empty index list"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::shape("gather_rows", format!("index {bad} out of {r} rows")));
        }
        let src = self.value(a).data();
        let data = idx.iter().flat_map(|&i| src[i * c..(i + 1) * c].iter().copied()).collect();
        let out = Tensor::new(vec![idx.len(), c], data)?;
        self.push("gather_rows", out, Op::GatherRows(a, idx.to_vec()), &[a])
    }

    /// Applies an `n×n` operator to every `n`-row block of `x`.
    ///
    /// `x` stacks a batch of node matrices as `(batch·n)×c`; block `b` of the
    /// result is `adj · x_b`.
    pub fn propagate(&mut self, adj: Var, x: Var) -> Result<Var> {
        let (n, n2) = self.require_2d("propagate", adj)?;
        let (r, c) = self.require_2d("propagate", x)?;
        if n != n2 || r % n != 0 {
            return Err(Error::shape("propagate", format!("operator {n}x{n2} over rows {r}x{c}")));
        }
        let a = self.value(adj).data();
        let xd = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for off in (0..r / n).map(|b| b * n * c) {
            let blk = off..off + n * c;
            matmul_into(a, &xd[blk.clone()], &mut out[blk], n, n, c);
        }
        let out = Tensor::new(vec![r, c], out)?;
        self.push("propagate", out, Op::Propagate { adj, x }, &[adj, x])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self
            .value(a)
            .reshape(shape)
            .map_err(|_| Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape(a))))?;
        self.push("reshape", out, Op::Reshape(a), &[a])
    }

    /// Back-propagates from a scalar root. Allowed once per recorded pass.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::invalid("backward already ran on this tape; reset it first"));
        }
        if root.0 >= self.nodes.len() {
            return Err(Error::invalid("backward root is not on this tape"));
        }
        if !self.value(root).is_scalar() {
            return Err(Error::shape("backward", format!("root must be scalar, got {:?}", self.shape(root))));
        }
        if !self.nodes[root.0].requires_grad {
            return Err(Error::invalid("backward root does not depend on any parameter"));
        }
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        self.grads[root.0] = Some(Tensor::full(self.shape(root), 1.0));

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            for (v, d) in self.local_grads(idx, &g) {
                self.accumulate(v, d);
            }
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta) {
                    *a += b;
                }
            }
            slot @ None => {
                let shape = self.nodes[v.0].value.shape().to_vec();
                *slot = Some(Tensor::new(shape, delta).expect("gradient shape"));
            }
        }
    }

    /// Vector-Jacobian products of node `idx` with respect to its inputs.
    fn local_grads(&self, idx: usize, g: &Tensor) -> Vec<(Var, Vec<f64>)> {
        let gd = g.data();
        let out = &self.nodes[idx].value;
        let mut acc: Vec<(Var, Vec<f64>)> = Vec::with_capacity(2);
        match self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                if self.requires_grad(a) {
                    let mut da = vec![0.0; m * k];
                    matmul_bt_into(gd, self.value(b).data(), &mut da, m, n, k);
                    acc.push((a, da));
                }
                if self.requires_grad(b) {
                    let mut db = vec![0.0; k * n];
                    matmul_at_into(self.value(a).data(), gd, &mut db, k, m, n);
                    acc.push((b, db));
                }
            }
            Op::Add(a, b) => {
                acc.push((a, gd.to_vec()));
                acc.push((b, gd.to_vec()));
            }
            Op::Sub(a, b) => {
                acc.push((a, gd.to_vec()));
                acc.push((b, gd.iter().map(|x| -x).collect()));
            }
            Op::Mul(a, b) => {
                let da = gd.iter().zip(self.value(b).data()).map(|(g, y)| g * y).collect();
                let db = gd.iter().zip(self.value(a).data()).map(|(g, x)| g * x).collect();
                acc.push((a, da));
                acc.push((b, db));
            }
            Op::AddBias(a, bias) => {
                let c = self.value(bias).numel();
                let mut db = vec![0.0; c];
                for row in gd.chunks(c) {
                    for (o, x) in db.iter_mut().zip(row) {
                        *o += x;
                    }
                }
                acc.push((a, gd.to_vec()));
                acc.push((bias, db));
            }
            Op::Scale(a, c) => acc.push((a, gd.iter().map(|x| x * c).collect())),
            Op::AddScalar(a) | Op::Reshape(a) => acc.push((a, gd.to_vec())),
            Op::Sigmoid(a) => {
                let d = gd.iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
                acc.push((a, d));
            }
            Op::Tanh(a) => {
                let d = gd.iter().zip(out.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
                acc.push((a, d));
            }
            Op::Exp(a) => {
                let d = gd.iter().zip(out.data()).map(|(g, y)| g * y).collect();
                acc.push((a, d));
            }
            Op::Log(a) => {
                let d = gd.iter().zip(self.value(a).data()).map(|(g, x)| g / x).collect();
                acc.push((a, d));
            }
            Op::Abs(a) => {
                let d = gd
                    .iter()
                    .zip(self.value(a).data())
                    .map(|(&g, &x)| if x == 0.0 { 0.0 } else { g * x.signum() })
                    .collect();
                acc.push((a, d));
            }
            Op::Relu(a) => {
                let d = gd
                    .iter()
                    .zip(self.value(a).data())
                    .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                acc.push((a, d));
            }
            Op::Sum(a) => {
                let n = self.value(a).numel();
                acc.push((a, vec![gd[0]; n]));
            }
            Op::Mean(a) => {
                let n = self.value(a).numel();
                acc.push((a, vec![gd[0] / n as f64; n]));
            }
            Op::SumRows(a) => {
                let c = self.value(a).cols();
                let d = gd.iter().flat_map(|&g| std::iter::repeat_n(g, c)).collect();
                acc.push((a, d));
            }
            Op::SumCols(a) => {
                let r = self.value(a).rows();
                let d = (0..r).flat_map(|_| gd.iter().copied()).collect();
                acc.push((a, d));
            }
            Op::MaxAll(a, at) => {
                let mut d = vec![0.0; self.value(a).numel()];
                d[at] = gd[0];
                acc.push((a, d));
            }
            Op::Softmax(a) => {
                let c = out.cols();
                let mut d = Vec::with_capacity(gd.len());
                for (grow, yrow) in gd.chunks(c).zip(out.data().chunks(c)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                    d.extend(grow.iter().zip(yrow).map(|(g, y)| y * (g - dot)));
                }
                acc.push((a, d));
            }
            Op::LogSoftmax(a) => {
                let c = out.cols();
                let mut d = Vec::with_capacity(gd.len());
                for (grow, yrow) in gd.chunks(c).zip(out.data().chunks(c)) {
                    let gsum: f64 = grow.iter().sum();
                    d.extend(grow.iter().zip(yrow).map(|(g, y)| g - y.exp() * gsum));
                }
                acc.push((a, d));
            }
            Op::Concat(ref parts) => {
                let (r, total) = (out.rows(), out.cols());
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.requires_grad(p) {
                        let mut d = Vec::with_capacity(r * w);
                        for row in gd.chunks(total) {
                            d.extend_from_slice(&row[off..off + w]);
                        }
                        acc.push((p, d));
                    }
                    off += w;
                }
            }
            Op::SliceCols(a, start) => {
                let c = self.value(a).cols();
                let len = out.cols();
                let mut d = vec![0.0; self.value(a).numel()];
                for (i, grow) in gd.chunks(len).enumerate() {
                    d[i * c + start..i * c + start + len].copy_from_slice(grow);
                }
                acc.push((a, d));
            }
            Op::Transpose(a) => acc.push((a, g.transpose().into_data())),
            Op::GatherRows(a, ref idx) => {
                let c = self.value(a).cols();
                let mut d = vec![0.0; self.value(a).numel()];
                for (grow, &src) in gd.chunks(c).zip(idx) {
                    for (o, x) in d[src * c..(src + 1) * c].iter_mut().zip(grow) {
                        *o += x;
                    }
                }
                acc.push((a, d));
            }
            Op::Propagate { adj, x } => {
                let n = self.value(adj).rows();
                let (r, c) = (self.value(x).rows(), self.value(x).cols());
                let blocks = (0..r / n).map(|b| b * n * c..(b + 1) * n * c);
                if self.requires_grad(x) {
                    let a = self.value(adj).data();
                    let mut dx = vec![0.0; r * c];
                    for blk in blocks.clone() {
                        matmul_at_into(a, &gd[blk.clone()], &mut dx[blk], n, n, c);
                    }
                    acc.push((x, dx));
                }
                if self.requires_grad(adj) {
                    let xd = self.value(x).data();
                    let mut da = vec![0.0; n * n];
                    for blk in blocks {
                        matmul_bt_into(&gd[blk.clone()], &xd[blk], &mut da, n, c, n);
                    }
                    acc.push((adj, da));
                }
            }
        }
        acc
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = row.iter().map(|x| (x - mx).exp()).collect();
    let s: f64 = ex.iter().sum();
    ex.into_iter().map(|e| e / s).collect()
}
