//! Define-by-run reverse-mode automatic differentiation over dense `f64`
//! tensors.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value
//! and enough information to push gradients back to its inputs. Nodes are
//! addressed by [`Var`] handles, which are only meaningful for the graph that
//! produced them. Recording order is a valid topological order, so
//! [`Graph::backward`] is a single reverse sweep.
//!
//! Broadcasting is deliberately narrow: binary ops accept equal shapes or a
//! single-element operand on either side. Row-wise bias addition has its own
//! op ([`Graph::add_bias`]).

use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major tensor of 64-bit floats.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?}[{} values]", self.shape, self.data.len())
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {expected} values but {} were supplied",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Rank-0 tensor.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Rank-1 tensor owning `data`.
    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn dims2(&self, what: &str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            s => Err(Error::Dimension(format!("{what} expects a matrix, got shape {s:?}"))),
        }
    }
}

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Exp,
    Log,
    Sigmoid,
    Softplus,
    Negate,
    Scale(f64),
    LeakyRelu(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>> + Send>;

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Binary(Binary, Var, Var),
    AddBias(Var, Var),
    Unary(Unary, Var),
    Clamp(Var, f64, f64),
    Reduce(Reduction, Var, Option<usize>),
    LogSumExp(Var),
    Reshape(Var),
    Custom(Vec<Var>, BackwardFn),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A recording tape. One graph per forward pass; graphs are independent and
/// may live on different threads.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0].as_ref().map(|g| Tensor {
            shape: self.nodes[v.0].value.shape.clone(),
            data: g.clone(),
        })
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner dimensions disagree: {:?} x {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul_nt")?;
        let (n, k2) = self.value(b).dims2("matmul_nt")?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul_nt inner dimensions disagree: {:?} x {:?}ᵀ",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNt(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.value(a).dims2("transpose")?;
        let out = transpose(self.value(a).data(), r, c);
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = Tensor::new(shape.to_vec(), self.value(a).data.clone()).map_err(|_| {
            Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(a)
            ))
        })?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let f = |x: f64, y: f64| match op {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
        };
        let value = if va.shape == vb.shape {
            Tensor {
                shape: va.shape.clone(),
                data: va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect(),
            }
        } else if vb.numel() == 1 {
            let y = vb.data[0];
            Tensor {
                shape: va.shape.clone(),
                data: va.data.iter().map(|&x| f(x, y)).collect(),
            }
        } else if va.numel() == 1 {
            let x = va.data[0];
            Tensor {
                shape: vb.shape.clone(),
                data: vb.data.iter().map(|&y| f(x, y)).collect(),
            }
        } else {
            return Err(Error::Dimension(format!(
                "{op:?} operands have shapes {:?} and {:?}",
                va.shape, vb.shape
            )));
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Binary(op, a, b), rg))
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

    /// Adds vector `bias` [n] to every row of `x` [m×n].
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2("add_bias")?;
        if self.shape(bias) != [n] {
            return Err(Error::Dimension(format!(
                "bias of shape {:?} does not match rows of {:?}",
                self.shape(bias),
                self.shape(x)
            )));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data.clone();
        for row in out.chunks_exact_mut(n) {
            for (o, &bj) in row.iter_mut().zip(b) {
                *o += bj;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::AddBias(x, bias), rg))
    }

    pub fn unary(&mut self, op: Unary, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if op == Unary::Log {
            if let Some(bad) = vx.data.iter().find(|&&v| !(v > 0.0)) {
                return Err(Error::Domain(format!("log of non-positive value {bad}")));
            }
        }
        let data = vx.data.iter().map(|&v| apply_unary(op, v)).collect();
        let value = Tensor {
            shape: vx.shape.clone(),
            data,
        };
        let rg = self.rg(x);
        Ok(self.push(value, Op::Unary(op, x), rg))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Softplus, x)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Negate, x)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(Unary::Scale(c), x)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary(Unary::LeakyRelu(slope), x)
    }

    /// Clamps into `[lo, hi]`; gradient is zero where the clamp is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if !(lo <= hi) {
            return Err(Error::Contract(format!("clamp bounds [{lo}, {hi}]")));
        }
        let vx = self.value(x);
        let value = Tensor {
            shape: vx.shape.clone(),
            data: vx.data.iter().map(|v| v.clamp(lo, hi)).collect(),
        };
        let rg = self.rg(x);
        Ok(self.push(value, Op::Clamp(x, lo, hi), rg))
    }

    /// Sum or mean over one axis, or over everything when `axis` is `None`.
    pub fn reduce(&mut self, op: Reduction, x: Var, axis: Option<usize>) -> Result<Var> {
        let vx = self.value(x);
        let value = match axis {
            None => {
                if op == Reduction::Mean && vx.numel() == 0 {
                    return Err(Error::Domain("mean of an empty tensor".into()));
                }
                let s: f64 = vx.data.iter().sum();
                let v = match op {
                    Reduction::Sum => s,
                    Reduction::Mean => s / vx.numel() as f64,
                };
                Tensor::scalar(v)
            }
            Some(ax) => {
                if ax >= vx.rank() {
                    return Err(Error::Dimension(format!(
                        "axis {ax} out of range for shape {:?}",
                        vx.shape
                    )));
                }
                let (outer, len, inner) = axis_split(&vx.shape, ax);
                if op == Reduction::Mean && len == 0 {
                    return Err(Error::Domain(format!(
                        "mean over empty axis {ax} of shape {:?}",
                        vx.shape
                    )));
                }
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for l in 0..len {
                        let src = &vx.data[(o * len + l) * inner..(o * len + l + 1) * inner];
                        for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                if op == Reduction::Mean {
                    let inv = 1.0 / len as f64;
                    out.iter_mut().for_each(|v| *v *= inv);
                }
                let mut shape = vx.shape.clone();
                shape.remove(ax);
                Tensor { shape, data: out }
            }
        };
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reduce(op, x, axis), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(Reduction::Sum, x, None)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(Reduction::Mean, x, None)
    }

    /// `log Σ exp(xᵢ)` over every element, with max subtraction.
    pub fn logsumexp(&mut self, x: Var) -> Result<Var> {
        let v = logsumexp(self.value(x).data())?;
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(v), Op::LogSumExp(x), rg))
    }

    /// Records an op whose value was computed elsewhere. `backward` maps the
    /// upstream gradient (one entry per output element) to one gradient
    /// vector per input, each matching that input's element count.
    pub fn custom<F>(&mut self, inputs: &[Var], value: Tensor, backward: F) -> Var
    where
        F: Fn(&[f64]) -> Vec<Vec<f64>> + Send + 'static,
    {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(value, Op::Custom(inputs.to_vec(), Box::new(backward)), rg)
    }

    /// Accumulates `∂loss/∂leaf` into every trainable leaf reachable from
    /// `loss`. Calling it twice without [`Graph::zero_grad`] sums the results.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    match &mut self.grads[idx] {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        slot @ None => *slot = Some(g),
                    }
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let n = self.shape(*b)[1];
                    if self.rg(*a) {
                        let ga = slot(&mut grads, *a, m * k);
                        gemm_nt_acc(&g, self.value(*b).data(), ga, m, n, k);
                    }
                    if self.rg(*b) {
                        let gb = slot(&mut grads, *b, k * n);
                        gemm_tn_acc(self.value(*a).data(), &g, gb, k, m, n);
                    }
                }
                Op::MatMulNt(a, b) => {
                    let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let n = self.shape(*b)[0];
                    if self.rg(*a) {
                        let ga = slot(&mut grads, *a, m * k);
                        gemm_nn_acc(&g, self.value(*b).data(), ga, m, n, k);
                    }
                    if self.rg(*b) {
                        let gb = slot(&mut grads, *b, n * k);
                        gemm_tn_acc(&g, self.value(*a).data(), gb, n, m, k);
                    }
                }
                Op::Transpose(a) => {
                    let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                    let gt = transpose(&g, c, r);
                    add_into(slot(&mut grads, *a, r * c), &gt);
                }
                Op::Reshape(a) => {
                    let n = g.len();
                    add_into(slot(&mut grads, *a, n), &g);
                }
                Op::Binary(op, a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (na, nb) = (va.numel(), vb.numel());
                    let out_n = g.len();
                    // Partial derivatives as functions of the output index.
                    let av = |i: usize| if na == out_n { va.data[i] } else { va.data[0] };
                    let bv = |i: usize| if nb == out_n { vb.data[i] } else { vb.data[0] };
                    let (da, db): (Vec<f64>, Vec<f64>) = match op {
                        Binary::Add => (g.clone(), g.clone()),
                        Binary::Sub => (g.clone(), g.iter().map(|x| -x).collect()),
                        Binary::Mul => (
                            (0..out_n).map(|i| g[i] * bv(i)).collect(),
                            (0..out_n).map(|i| g[i] * av(i)).collect(),
                        ),
                    };
                    let (rga, rgb) = (self.rg(*a), self.rg(*b));
                    if rga {
                        reduce_broadcast(slot(&mut grads, *a, na), &da);
                    }
                    if rgb {
                        reduce_broadcast(slot(&mut grads, *b, nb), &db);
                    }
                }
                Op::AddBias(x, bias) => {
                    let n = self.shape(*bias)[0];
                    if self.rg(*x) {
                        add_into(slot(&mut grads, *x, g.len()), &g);
                    }
                    if self.rg(*bias) {
                        let gb = slot(&mut grads, *bias, n);
                        for row in g.chunks_exact(n) {
                            add_into(gb, row);
                        }
                    }
                }
                Op::Unary(op, x) => {
                    let vx = self.value(*x).data();
                    let out = node.value.data();
                    let gx = slot(&mut grads, *x, vx.len());
                    for i in 0..vx.len() {
                        let d = match *op {
                            Unary::Exp => out[i],
                            Unary::Log => 1.0 / vx[i],
                            Unary::Sigmoid => out[i] * (1.0 - out[i]),
                            Unary::Softplus => sigmoid(vx[i]),
                            Unary::Negate => -1.0,
                            Unary::Scale(c) => c,
                            Unary::LeakyRelu(s) => {
                                if vx[i] > 0.0 {
                                    1.0
                                } else {
                                    s
                                }
                            }
                        };
                        gx[i] += g[i] * d;
                    }
                }
                Op::Clamp(x, lo, hi) => {
                    let vx = self.value(*x).data();
                    let gx = slot(&mut grads, *x, vx.len());
                    for i in 0..vx.len() {
                        if vx[i] >= *lo && vx[i] <= *hi {
                            gx[i] += g[i];
                        }
                    }
                }
                Op::Reduce(op, x, axis) => {
                    let shape = self.shape(*x).to_vec();
                    let n: usize = shape.iter().product();
                    let gx = slot(&mut grads, *x, n);
                    match axis {
                        None => {
                            let d = match op {
                                Reduction::Sum => g[0],
                                Reduction::Mean => g[0] / n as f64,
                            };
                            gx.iter_mut().for_each(|v| *v += d);
                        }
                        Some(ax) => {
                            let (outer, len, inner) = axis_split(&shape, *ax);
                            let f = match op {
                                Reduction::Sum => 1.0,
                                Reduction::Mean => 1.0 / len as f64,
                            };
                            for o in 0..outer {
                                let up = &g[o * inner..(o + 1) * inner];
                                for l in 0..len {
                                    let dst = &mut gx[(o * len + l) * inner..(o * len + l + 1) * inner];
                                    for (d, &u) in dst.iter_mut().zip(up) {
                                        *d += f * u;
                                    }
                                }
                            }
                        }
                    }
                }
                Op::LogSumExp(x) => {
                    let vx = self.value(*x).data();
                    let lse = node.value.data[0];
                    let gx = slot(&mut grads, *x, vx.len());
                    for (d, &v) in gx.iter_mut().zip(vx) {
                        *d += g[0] * (v - lse).exp();
                    }
                }
                Op::Custom(inputs, f) => {
                    let parts = f(&g);
                    debug_assert_eq!(parts.len(), inputs.len());
                    for (&inp, part) in inputs.iter().zip(parts) {
                        if self.rg(inp) {
                            let n = self.value(inp).numel();
                            add_into(slot(&mut grads, inp, n), &part);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Sums a full-size gradient down to a broadcast single-element operand.
fn reduce_broadcast(dst: &mut [f64], src: &[f64]) {
    if dst.len() == src.len() {
        add_into(dst, src);
    } else {
        dst[0] += src.iter().sum::<f64>();
    }
}

fn axis_split(shape: &[usize], ax: usize) -> (usize, usize, usize) {
    let outer = shape[..ax].iter().product();
    let inner = shape[ax + 1..].iter().product();
    (outer, shape[ax], inner)
}

fn apply_unary(op: Unary, v: f64) -> f64 {
    match op {
        Unary::Exp => v.exp(),
        Unary::Log => v.ln(),
        Unary::Sigmoid => sigmoid(v),
        Unary::Softplus => softplus(v),
        Unary::Negate => -v,
        Unary::Scale(c) => c * v,
        Unary::LeakyRelu(s) => {
            if v > 0.0 {
                v
            } else {
                s * v
            }
        }
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

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Max-shifted `log Σ exp(xᵢ)`.
pub fn logsumexp(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Domain("logsumexp of an empty vector".into()));
    }
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Ok(m);
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    Ok(m + s.ln())
}

fn transpose(src: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    out
}

/// out[m×n] += a[m×k] · b[k×n]
fn gemm_nn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// out[m×n] += a[m×k] · b[n×k]ᵀ
fn gemm_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += dot(arow, brow);
        }
    }
}

/// out[m×n] += a[k×m]ᵀ · b[k×n]
fn gemm_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += api * bv;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the loop vectorize.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}
