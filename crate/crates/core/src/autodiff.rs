//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every operation in creation order, so node ids are a
//! topological order by construction. [`Tape::backward`] sweeps the ids in
//! reverse, which guarantees that a node's gradient is complete before it is
//! propagated to its parents.

use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major matrix of finite `f64` values. Scalars are `1 x 1`.
#[derive(Clone, PartialEq)]
pub struct Array {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Array {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Array")
            .field("shape", &[self.rows, self.cols])
            .field("data", &self.data)
            .finish()
    }
}

impl Array {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for shape [{rows}, {cols}]",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NumericDomain(format!("non-finite entry {bad}")));
        }
        Ok(Array { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Array {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Array {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Array {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Array::new(rows.len(), cols, rows.concat())
    }

    /// Column vector `[n x 1]`.
    pub fn column(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Array::new(n, 1, values)
    }

    pub fn identity(n: usize) -> Self {
        let mut a = Array::zeros(n, n);
        for i in 0..n {
            a.data[i * n + i] = 1.0;
        }
        a
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Value of a `1 x 1` array.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Array {
        Array {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Plain matrix product without recording anything.
    pub fn matmul(&self, other: &Array) -> Result<Array> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "matmul [{}, {}] x [{}, {}]",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Array {
            rows: m,
            cols: n,
            data: out,
        })
    }

    pub fn transpose(&self) -> Array {
        let mut data = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Array {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    /// Select rows by index, in the given order.
    pub fn gather_rows(&self, idx: &[usize]) -> Array {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Array {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    fn add_assign(&mut self, other: &Array) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Elementwise operation kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Mul,
    Neg,
    Log,
    Exp,
    Relu,
    Sigmoid,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `b` may be a `1 x n` row broadcast over the rows of `a`.
    Add(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Log(Var),
    Exp(Var),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    Reversal(Var, f64),
    Affine(Var, f64),
    /// Gradient passes only where the input was inside the bounds.
    Clamp(Var, f64, f64),
    Sum(Var),
    RowOuter(Var, Var),
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) | Op::RowOuter(a, b) => vec![a, b],
            Op::Neg(a)
            | Op::Log(a)
            | Op::Exp(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::SoftmaxRows(a)
            | Op::Reversal(a, _)
            | Op::Affine(a, _)
            | Op::Clamp(a, _, _)
            | Op::Sum(a) => vec![a],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Array,
    op: Op,
}

/// Ordered record of a computation. Not shared across threads; build one
/// tape per thread.
#[derive(Default, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Array>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array, op: Op) -> Var {
        debug_assert!(op.parents().iter().all(|p| p.0 < self.nodes.len()));
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Record an input or parameter.
    pub fn leaf(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Copy a node's value into a fresh leaf, cutting the gradient path.
    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.clone();
        self.leaf(v)
    }

    pub fn value(&self, x: Var) -> &Array {
        &self.nodes[x.0].value
    }

    /// Gradient of the last `backward` loss with respect to `x`.
    pub fn grad(&self, x: Var) -> &Array {
        &self.grads[x.0]
    }

    pub fn parents(&self, x: Var) -> Vec<Var> {
        self.nodes[x.0].op.parents()
    }

    /// Every node's parents have smaller ids.
    pub fn is_topological(&self) -> bool {
        self.nodes
            .iter()
            .enumerate()
            .all(|(i, n)| n.op.parents().iter().all(|p| p.0 < i))
    }

    /// Which side of every non-smooth point (relu at 0, clamp bounds) each
    /// entry sits on. Two evaluations with equal signatures lie on the same
    /// smooth piece, so finite differences between them are meaningful.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for n in &self.nodes {
            match n.op {
                Op::Relu(a) => sig.extend(self.value(a).data.iter().map(|&v| v > 0.0)),
                Op::Clamp(a, lo, hi) => {
                    for &v in &self.value(a).data {
                        sig.push(v > lo);
                        sig.push(v < hi);
                    }
                }
                _ => {}
            }
        }
        sig
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    fn binary_shapes(&self, a: Var, b: Var, name: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb || (sb[0] == 1 && sb[1] == sa[1]) {
            Ok(())
        } else {
            Err(Error::Dimension(format!("{name} {sa:?} with {sb:?}")))
        }
    }

    fn zip_broadcast(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Array {
        let (va, vb) = (self.value(a), self.value(b));
        let cols = va.cols;
        let data = va
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = if vb.rows == va.rows {
                    vb.data[i]
                } else {
                    vb.data[i % cols]
                };
                f(x, y)
            })
            .collect();
        Array {
            rows: va.rows,
            cols,
            data,
        }
    }

    /// `a + b`, where `b` is either the same shape as `a` or a `1 x n` bias row.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shapes(a, b, "add")?;
        let v = self.zip_broadcast(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    /// Elementwise product with the same broadcasting rule as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shapes(a, b, "mul")?;
        let v = self.zip_broadcast(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| -x);
        self.push(v, Op::Neg(a))
    }

    /// Natural log; every entry must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data.iter().find(|&&x| x <= 0.0) {
            return Err(Error::NumericDomain(format!("log of {bad}")));
        }
        let v = self.value(a).map(f64::ln);
        Ok(self.push(v, Op::Log(a)))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        if v.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericDomain("exp overflow".into()));
        }
        Ok(self.push(v, Op::Exp(a)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    /// Dispatch helper over [`Elementwise`]. Unary kinds take one input.
    pub fn elementwise(&mut self, op: Elementwise, inputs: &[Var]) -> Result<Var> {
        let arity = match op {
            Elementwise::Add | Elementwise::Mul => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::Contract(format!(
                "{op:?} takes {arity} inputs, got {}",
                inputs.len()
            )));
        }
        match op {
            Elementwise::Add => self.add(inputs[0], inputs[1]),
            Elementwise::Mul => self.mul(inputs[0], inputs[1]),
            Elementwise::Neg => Ok(self.neg(inputs[0])),
            Elementwise::Log => self.log(inputs[0]),
            Elementwise::Exp => self.exp(inputs[0]),
            Elementwise::Relu => Ok(self.relu(inputs[0])),
            Elementwise::Sigmoid => Ok(self.sigmoid(inputs[0])),
        }
    }

    /// Row-wise softmax with max-shift.
    pub fn softmax_rows(&mut self, logits: Var) -> Var {
        let x = self.value(logits);
        let mut data = Vec::with_capacity(x.data.len());
        for r in 0..x.rows {
            let row = x.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            data.extend(exps.iter().map(|e| e / total));
        }
        let v = Array {
            rows: x.rows,
            cols: x.cols,
            data,
        };
        self.push(v, Op::SoftmaxRows(logits))
    }

    /// Identity forward; backward multiplies the incoming gradient by `-strength`.
    pub fn gradient_reversal(&mut self, x: Var, strength: f64) -> Result<Var> {
        if !(strength >= 0.0) || !strength.is_finite() {
            return Err(Error::Contract(format!(
                "reversal strength must be finite and >= 0, got {strength}"
            )));
        }
        let v = self.value(x).clone();
        Ok(self.push(v, Op::Reversal(x, strength)))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(a).map(|x| scale * x + shift);
        self.push(v, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.affine(a, k, 0.0)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    /// Sum of all entries as a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Array::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row `i` of the result is the flattened outer product `a_i ⊗ b_i`.
    pub fn row_outer(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows != vb.rows {
            return Err(Error::Dimension(format!(
                "row_outer needs equal rows, got {} and {}",
                va.rows, vb.rows
            )));
        }
        let (n, p, q) = (va.rows, va.cols, vb.cols);
        let mut data = Vec::with_capacity(n * p * q);
        for i in 0..n {
            for &x in va.row(i) {
                data.extend(vb.row(i).iter().map(|&y| x * y));
            }
        }
        let v = Array {
            rows: n,
            cols: p * q,
            data,
        };
        Ok(self.push(v, Op::RowOuter(a, b)))
    }

    /// Reverse sweep from a scalar `loss`. Gradients of earlier sweeps are
    /// discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.grads = self
            .nodes
            .iter()
            .map(|n| Array::zeros(n.value.rows, n.value.cols))
            .collect();
        self.grads[loss.0].data[0] = 1.0;

        for id in (0..=loss.0).rev() {
            if self.grads[id].data.iter().all(|&g| g == 0.0) {
                continue;
            }
            for (parent, delta) in self.local_grads(id) {
                self.grads[parent.0].add_assign(&delta);
            }
        }
        Ok(())
    }

    /// Sum a full-shape gradient down to a broadcast `1 x n` row if needed.
    fn reduce_to(&self, x: Var, g: Array) -> Array {
        let target = self.value(x);
        if target.rows == g.rows {
            return g;
        }
        let mut out = Array::zeros(1, g.cols);
        for r in 0..g.rows {
            for (o, v) in out.data.iter_mut().zip(g.row(r)) {
                *o += v;
            }
        }
        out
    }

    /// Contributions of node `id` to its parents' gradients.
    fn local_grads(&self, id: usize) -> Vec<(Var, Array)> {
        let out = &self.nodes[id].value;
        let g = &self.grads[id];
        let mut acc = Vec::with_capacity(2);
        match self.nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ga = g
                    .matmul(&self.value(b).transpose())
                    .expect("shapes checked");
                let gb = self.value(a).transpose().matmul(g).expect("shapes checked");
                acc.push((a, ga));
                acc.push((b, gb));
            }
            Op::Add(a, b) => {
                acc.push((a, g.clone()));
                let gb = self.reduce_to(b, g.clone());
                acc.push((b, gb));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                let cols = va.cols;
                let broadcast = vb.rows != va.rows;
                let mut ga = Array::zeros(va.rows, cols);
                let mut gb_full = Array::zeros(va.rows, cols);
                for i in 0..g.data.len() {
                    let y = if broadcast {
                        vb.data[i % cols]
                    } else {
                        vb.data[i]
                    };
                    ga.data[i] = g.data[i] * y;
                    gb_full.data[i] = g.data[i] * va.data[i];
                }
                let gb = self.reduce_to(b, gb_full);
                acc.push((a, ga));
                acc.push((b, gb));
            }
            Op::Neg(a) => {
                let ga = g.map(|v| -v);
                acc.push((a, ga));
            }
            Op::Log(a) => {
                let ga = zip_map(g, self.value(a), |gi, x| gi / x);
                acc.push((a, ga));
            }
            Op::Exp(a) => {
                let ga = zip_map(g, out, |gi, y| gi * y);
                acc.push((a, ga));
            }
            Op::Relu(a) => {
                let ga = zip_map(g, self.value(a), |gi, x| if x > 0.0 { gi } else { 0.0 });
                acc.push((a, ga));
            }
            Op::Sigmoid(a) => {
                let ga = zip_map(g, out, |gi, y| gi * y * (1.0 - y));
                acc.push((a, ga));
            }
            Op::SoftmaxRows(a) => {
                let mut ga = Array::zeros(out.rows, out.cols);
                for r in 0..out.rows {
                    let (y, gr) = (out.row(r), g.row(r));
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..out.cols {
                        ga.data[r * out.cols + c] = y[c] * (gr[c] - dot);
                    }
                }
                acc.push((a, ga));
            }
            Op::Reversal(a, strength) => {
                let ga = g.map(|v| -strength * v);
                acc.push((a, ga));
            }
            Op::Affine(a, scale) => {
                let ga = g.map(|v| scale * v);
                acc.push((a, ga));
            }
            Op::Clamp(a, lo, hi) => {
                let ga = zip_map(g, self.value(a), |gi, x| {
                    if (lo..=hi).contains(&x) {
                        gi
                    } else {
                        0.0
                    }
                });
                acc.push((a, ga));
            }
            Op::Sum(a) => {
                let va = self.value(a);
                let ga = Array::filled(va.rows, va.cols, g.data[0]);
                acc.push((a, ga));
            }
            Op::RowOuter(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                let (n, p, q) = (va.rows, va.cols, vb.cols);
                let mut ga = Array::zeros(n, p);
                let mut gb = Array::zeros(n, q);
                for i in 0..n {
                    for c in 0..p {
                        let block = &g.data[i * p * q + c * q..i * p * q + (c + 1) * q];
                        let ac = va.data[i * p + c];
                        let mut dot = 0.0;
                        for k in 0..q {
                            dot += block[k] * vb.data[i * q + k];
                            gb.data[i * q + k] += block[k] * ac;
                        }
                        ga.data[i * p + c] = dot;
                    }
                }
                acc.push((a, ga));
                acc.push((b, gb));
            }
        }
        acc
    }
}

fn zip_map(g: &Array, x: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    Array {
        rows: g.rows,
        cols: g.cols,
        data: g.data.iter().zip(&x.data).map(|(&a, &b)| f(a, b)).collect(),
    }
}
