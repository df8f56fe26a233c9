//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] is an append-only arena of nodes. Each op pushes its value and
//! the rule needed to pull gradients back to its inputs; [`Tape::backward`]
//! then walks the arena once in reverse insertion order, which is a valid
//! reverse topological order because inputs always precede their users.
//!
//! Nodes created from [`Tape::constant`] (and everything computed only from
//! constants) are skipped on the backward pass.

use super::dense::{matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Inputs to `reciprocal` and `log` closer to zero than this are rejected.
pub const GUARD_BAND: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Neg,
    Exp,
    Log,
    Reciprocal,
    Tanh,
    Softplus,
    Sigmoid,
    Square,
    Scale(f64),
    Offset(f64),
    /// Quadratically smoothed rectifier with knee `d`.
    SmoothRelu(f64),
    /// Derivative of [`Unary::SmoothRelu`], `clamp(t / d, 0, 1)`.
    SmoothReluSlope(f64),
    Clamp(f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Unary(Unary, Var),
    Binary(Binary, Var, Var),
    MatMul(Var, Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    SumAll(Var),
    SumCols(Var),
    Column(Var, usize),
    ConcatCols(Vec<Var>),
    Gather(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`; zeros when `v` does not reach the root.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

fn unary_value(kind: Unary, x: f64) -> f64 {
    match kind {
        Unary::Neg => -x,
        Unary::Exp => x.exp(),
        Unary::Log => x.ln(),
        Unary::Reciprocal => 1.0 / x,
        Unary::Tanh => x.tanh(),
        Unary::Softplus => softplus(x),
        Unary::Sigmoid => sigmoid(x),
        Unary::Square => x * x,
        Unary::Scale(s) => s * x,
        Unary::Offset(s) => x + s,
        Unary::SmoothRelu(d) => smooth_relu(x, d),
        Unary::SmoothReluSlope(d) => (x / d).clamp(0.0, 1.0),
        Unary::Clamp(lo, hi) => x.clamp(lo, hi),
    }
}

/// Local derivative of a unary op given its input `x` and output `y`.
fn unary_slope(kind: Unary, x: f64, y: f64) -> f64 {
    match kind {
        Unary::Neg => -1.0,
        Unary::Exp => y,
        Unary::Log => 1.0 / x,
        Unary::Reciprocal => -y * y,
        Unary::Tanh => 1.0 - y * y,
        Unary::Softplus => sigmoid(x),
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Square => 2.0 * x,
        Unary::Scale(s) => s,
        Unary::Offset(_) => 1.0,
        Unary::SmoothRelu(d) => (x / d).clamp(0.0, 1.0),
        Unary::SmoothReluSlope(d) => {
            if x > 0.0 && x < d {
                1.0 / d
            } else {
                0.0
            }
        }
        Unary::Clamp(lo, hi) => {
            if x > lo && x < hi {
                1.0
            } else {
                0.0
            }
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
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

/// `0` for `t <= 0`, `t^2 / 2d` on `(0, d)`, `t - d/2` beyond.
pub fn smooth_relu(t: f64, d: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t < d {
        t * t / (2.0 * d)
    } else {
        t - 0.5 * d
    }
}

fn broadcast_shape(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::dim(op, &[a.0, a.1], &[b.0, b.1])),
    }
}

#[inline]
fn bidx(shape: (usize, usize), i: usize, j: usize) -> usize {
    let r = if shape.0 == 1 { 0 } else { i };
    let c = if shape.1 == 1 { 0 } else { j };
    r * shape.1 + c
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to(grad: &[f64], out: (usize, usize), shape: (usize, usize)) -> Tensor {
    if out == shape {
        return Tensor::from_raw(shape.0, shape.1, grad.to_vec());
    }
    let mut acc = vec![0.0; shape.0 * shape.1];
    for i in 0..out.0 {
        for j in 0..out.1 {
            acc[bidx(shape, i, j)] += grad[i * out.1 + j];
        }
    }
    Tensor::from_raw(shape.0, shape.1, acc)
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

    /// A differentiable leaf (parameter or input of interest).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::from_raw(1, 1, vec![value]))
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.constant(Tensor::zeros(rows, cols))
    }

    /// Copies the current value of `v` into a fresh constant.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, inputs: &[Var]) -> bool {
        inputs.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn unary(&mut self, kind: Unary, a: Var) -> Result<Var> {
        let x = self.value(a);
        match kind {
            Unary::Reciprocal => {
                if let Some(&bad) = x.data().iter().find(|v| v.abs() < GUARD_BAND) {
                    return Err(Error::Domain {
                        op: "reciprocal",
                        value: bad,
                    });
                }
            }
            Unary::Log => {
                if let Some(&bad) = x.data().iter().find(|&&v| !(v >= GUARD_BAND)) {
                    return Err(Error::Domain { op: "log", value: bad });
                }
            }
            _ => {}
        }
        let value = x.map(|v| unary_value(kind, v));
        let needs = self.grad_of(&[a]);
        Ok(self.push(value, Op::Unary(kind, a), needs))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Neg, a)
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Exp, a)
    }
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }
    pub fn reciprocal(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Reciprocal, a)
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Tanh, a)
    }
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Softplus, a)
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }
    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Square, a)
    }
    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(Unary::Scale(s), a)
    }
    pub fn offset(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(Unary::Offset(s), a)
    }
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(Unary::Clamp(lo, hi), a)
    }

    pub fn smoothed_relu(&mut self, a: Var, knee: f64) -> Result<Var> {
        if !(knee > 0.0) {
            return Err(Error::Contract(format!("smoothed_relu knee must be positive, got {knee}")));
        }
        self.unary(Unary::SmoothRelu(knee), a)
    }

    pub(crate) fn smoothed_relu_slope(&mut self, a: Var, knee: f64) -> Result<Var> {
        self.unary(Unary::SmoothReluSlope(knee), a)
    }

    /// Elementwise binary op; either operand may be a `1 x n` row, an
    /// `n x 1` column or a `1 x 1` scalar broadcast against the other.
    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "hadamard",
        };
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out = broadcast_shape(name, sa, sb)?;
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let f = |p: f64, q: f64| match kind {
            Binary::Add => p + q,
            Binary::Sub => p - q,
            Binary::Mul => p * q,
        };
        let data = if sa == sb {
            xa.iter().zip(xb).map(|(&p, &q)| f(p, q)).collect()
        } else {
            let mut d = Vec::with_capacity(out.0 * out.1);
            for i in 0..out.0 {
                for j in 0..out.1 {
                    d.push(f(xa[bidx(sa, i, j)], xb[bidx(sb, i, j)]));
                }
            }
            d
        };
        let needs = self.grad_of(&[a, b]);
        Ok(self.push(Tensor::from_raw(out.0, out.1, data), Op::Binary(kind, a, b), needs))
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

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let needs = self.grad_of(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), needs))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if c == 0 {
            return Err(Error::dim("softmax_rows", &[r, c], &[r, 1]));
        }
        let x = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for j in 0..c {
                let e = (row[j] - m).exp();
                out[i * c + j] = e;
                s += e;
            }
            for o in &mut out[i * c..(i + 1) * c] {
                *o /= s;
            }
        }
        let needs = self.grad_of(&[a]);
        Ok(self.push(Tensor::from_raw(r, c, out), Op::SoftmaxRows(a), needs))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if c == 0 {
            return Err(Error::dim("log_softmax_rows", &[r, c], &[r, 1]));
        }
        let x = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for j in 0..c {
                out[i * c + j] = row[j] - lse;
            }
        }
        let needs = self.grad_of(&[a]);
        Ok(self.push(Tensor::from_raw(r, c, out), Op::LogSoftmaxRows(a), needs))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        let needs = self.grad_of(&[a]);
        Ok(self.push(Tensor::from_raw(1, 1, vec![s]), Op::SumAll(a), needs))
    }

    /// Per-row sums, `r x c -> r x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let x = self.value(a).data();
        let out = (0..r).map(|i| x[i * c..(i + 1) * c].iter().sum()).collect();
        let needs = self.grad_of(&[a]);
        Ok(self.push(Tensor::from_raw(r, 1, out), Op::SumCols(a), needs))
    }

    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if j >= c {
            return Err(Error::dim("column", &[r, c], &[j]));
        }
        let x = self.value(a).data();
        let out = (0..r).map(|i| x[i * c + j]).collect();
        let needs = self.grad_of(&[a]);
        Ok(self.push(Tensor::from_raw(r, 1, out), Op::Column(a, j), needs))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Contract("concat_cols of nothing".into()));
        };
        let r = self.shape(first).0;
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != r {
                return Err(Error::dim("concat_cols", &[r], &[s.0, s.1]));
            }
            total += s.1;
        }
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let needs = self.grad_of(parts);
        Ok(self.push(Tensor::from_raw(r, total, out), Op::ConcatCols(parts.to_vec()), needs))
    }

    /// Picks entry `index[i]` from row `i`, `r x c -> r x 1`.
    pub fn gather(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(a);
        if index.len() != r {
            return Err(Error::dim("gather", &[r, c], &[index.len()]));
        }
        if let Some(&bad) = index.iter().find(|&&k| k >= c) {
            return Err(Error::dim("gather", &[r, c], &[bad]));
        }
        let x = self.value(a).data();
        let out = index.iter().enumerate().map(|(i, &k)| x[i * c + k]).collect();
        let needs = self.grad_of(&[a]);
        Ok(self.push(Tensor::from_raw(r, 1, out), Op::Gather(a, index.to_vec()), needs))
    }

    /// Reverse pass from a `1 x 1` root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_shape = self.shape(root);
        if root_shape != (1, 1) {
            return Err(Error::NonScalarRoot {
                shape: vec![root_shape.0, root_shape.1],
            });
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[root.0] = Some(Tensor::from_raw(1, 1, vec![1.0]));

        for id in (0..n).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        let shapes = self.nodes[..n].iter().map(|nd| nd.value.dims()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let out = node.value.dims();
        match &node.op {
            Op::Leaf => {}
            Op::Unary(kind, a) => {
                let x = self.value(*a).data();
                let y = node.value.data();
                let data = g
                    .data()
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(&gi, (&xi, &yi))| gi * unary_slope(*kind, xi, yi))
                    .collect();
                acc(*a, Tensor::from_raw(out.0, out.1, data));
            }
            Op::Binary(kind, a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                match kind {
                    Binary::Add => {
                        acc(*a, reduce_to(g.data(), out, sa));
                        acc(*b, reduce_to(g.data(), out, sb));
                    }
                    Binary::Sub => {
                        acc(*a, reduce_to(g.data(), out, sa));
                        let neg: Vec<f64> = g.data().iter().map(|v| -v).collect();
                        acc(*b, reduce_to(&neg, out, sb));
                    }
                    Binary::Mul => {
                        let (xa, xb) = (self.value(*a).data(), self.value(*b).data());
                        let mut ga = Vec::with_capacity(out.0 * out.1);
                        let mut gb = Vec::with_capacity(out.0 * out.1);
                        for i in 0..out.0 {
                            for j in 0..out.1 {
                                let gi = g.data()[i * out.1 + j];
                                ga.push(gi * xb[bidx(sb, i, j)]);
                                gb.push(gi * xa[bidx(sa, i, j)]);
                            }
                        }
                        acc(*a, reduce_to(&ga, out, sa));
                        acc(*b, reduce_to(&gb, out, sb));
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (n, k) = self.shape(*a);
                let m = self.shape(*b).1;
                if self.nodes[a.0].needs_grad {
                    let ga = matmul_nt(g.data(), self.value(*b).data(), n, m, k);
                    acc(*a, Tensor::from_raw(n, k, ga));
                }
                if self.nodes[b.0].needs_grad {
                    let gb = matmul_tn(self.value(*a).data(), g.data(), n, k, m);
                    acc(*b, Tensor::from_raw(k, m, gb));
                }
            }
            Op::SoftmaxRows(a) => {
                let (r, c) = out;
                let y = node.value.data();
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    let row = i * c..(i + 1) * c;
                    let dot: f64 = g.data()[row.clone()].iter().zip(&y[row.clone()]).map(|(p, q)| p * q).sum();
                    for j in row {
                        gx[j] = y[j] * (g.data()[j] - dot);
                    }
                }
                acc(*a, Tensor::from_raw(r, c, gx));
            }
            Op::LogSoftmaxRows(a) => {
                let (r, c) = out;
                let y = node.value.data();
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    let row = i * c..(i + 1) * c;
                    let total: f64 = g.data()[row.clone()].iter().sum();
                    for j in row {
                        gx[j] = g.data()[j] - y[j].exp() * total;
                    }
                }
                acc(*a, Tensor::from_raw(r, c, gx));
            }
            Op::SumAll(a) => {
                let (r, c) = self.shape(*a);
                acc(*a, Tensor::filled(r, c, g.item()));
            }
            Op::SumCols(a) => {
                let (r, c) = self.shape(*a);
                let mut gx = Vec::with_capacity(r * c);
                for i in 0..r {
                    gx.extend(std::iter::repeat(g.data()[i]).take(c));
                }
                acc(*a, Tensor::from_raw(r, c, gx));
            }
            Op::Column(a, j) => {
                let (r, c) = self.shape(*a);
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    gx[i * c + j] = g.data()[i];
                }
                acc(*a, Tensor::from_raw(r, c, gx));
            }
            Op::ConcatCols(parts) => {
                let (r, total) = out;
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p).1;
                    let mut gx = Vec::with_capacity(r * c);
                    for i in 0..r {
                        gx.extend_from_slice(&g.data()[i * total + offset..i * total + offset + c]);
                    }
                    acc(p, Tensor::from_raw(r, c, gx));
                    offset += c;
                }
            }
            Op::Gather(a, index) => {
                let (r, c) = self.shape(*a);
                let mut gx = vec![0.0; r * c];
                for (i, &k) in index.iter().enumerate() {
                    gx[i * c + k] = g.data()[i];
                }
                acc(*a, Tensor::from_raw(r, c, gx));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, v.to_vec()).unwrap()
    }

    /// Independent triple-loop product.
    fn brute_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (n, k) = a.dims();
        let m = b.cols();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                for p in 0..k {
                    out[i * m + j] += a.get(i, p) * b.get(p, j);
                }
            }
        }
        out
    }

    #[test]
    fn matmul_examples() {
        let mut tape = Tape::new();
        let id = tape.constant(Tensor::identity(2));
        let v = tape.constant(t(2, 1, &[3., 4.]));
        let out = tape.matmul(id, v).unwrap();
        assert_eq!(tape.value(out).data(), &[3., 4.]);

        let a = t(2, 2, &[1., 2., 3., 4.]);
        let b = t(2, 1, &[1., 1.]);
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let out = tape.matmul(va, vb).unwrap();
        assert_eq!(tape.value(out).data(), &[3., 7.]);
        assert_eq!(brute_matmul(&a, &b), vec![3., 7.]);

        let x = tape.constant(Tensor::zeros(2, 3));
        let y = tape.constant(Tensor::zeros(4, 2));
        assert!(matches!(tape.matmul(x, y), Err(Error::Dimension { .. })));
    }

    #[test]
    fn elementwise_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(t(1, 2, &[1., 2.]));
        let b = tape.constant(t(1, 2, &[3., 4.]));
        let h = tape.mul(a, b).unwrap();
        assert_eq!(tape.value(h).data(), &[3., 8.]);
        let z = tape.scalar(0.0);
        let e = tape.exp(z).unwrap();
        assert_eq!(tape.value(e).item(), 1.0);
        assert!(matches!(tape.reciprocal(z), Err(Error::Domain { .. })));
        assert!(matches!(tape.log(z), Err(Error::Domain { .. })));
        let tiny = tape.scalar(-1e-13);
        assert!(tape.reciprocal(tiny).is_err());
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(t(3, 2, &[0., 0., 1f64.ln(), 3f64.ln(), 1000., 1000.]));
        let s = tape.softmax_rows(a).unwrap();
        let v = tape.value(s).data();
        assert_eq!(&v[0..2], &[0.5, 0.5]);
        assert!((v[2] - 0.25).abs() < 1e-15 && (v[3] - 0.75).abs() < 1e-15);
        assert_eq!(&v[4..6], &[0.5, 0.5]);
    }

    #[test]
    fn smoothed_relu_examples() {
        assert_eq!(smooth_relu(0.0, 0.1), 0.0);
        assert_eq!(smooth_relu(-5.0, 0.1), 0.0);
        assert!((smooth_relu(0.05, 0.1) - 0.0125).abs() < 1e-15);
        assert!((smooth_relu(0.3, 0.1) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn backward_examples() {
        let mut tape = Tape::new();
        let x = tape.param(t(1, 1, &[3.]));
        let unrelated = tape.param(t(1, 1, &[7.]));
        let sq = tape.square(x).unwrap();
        let root = tape.sum(sq).unwrap();
        let g = tape.backward(root).unwrap();
        assert_eq!(g.wrt(x).item(), 6.0);
        assert_eq!(g.wrt(unrelated).item(), 0.0);

        let v = tape.param(t(1, 2, &[1., 2.]));
        assert!(matches!(tape.backward(v), Err(Error::NonScalarRoot { .. })));
    }

    #[test]
    fn broadcast_reduces_gradients() {
        let mut tape = Tape::new();
        let m = tape.param(t(2, 2, &[1., 2., 3., 4.]));
        let row = tape.param(t(1, 2, &[10., 20.]));
        let col = tape.param(t(2, 1, &[1., -1.]));
        let a = tape.add(m, row).unwrap();
        let b = tape.mul(a, col).unwrap();
        let root = tape.sum(b).unwrap();
        let g = tape.backward(root).unwrap();
        assert_eq!(g.wrt(row).data(), &[0., 0.]);
        assert_eq!(g.wrt(col).data(), &[33., 37.]);
        assert_eq!(g.wrt(m).data(), &[1., 1., -1., -1.]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(t(1, 1, &[2.]));
        let p = tape.param(t(1, 1, &[5.]));
        let prod = tape.mul(c, p).unwrap();
        let g = tape.backward(prod).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.wrt(p).item(), 2.0);
    }
}
