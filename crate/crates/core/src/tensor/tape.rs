use std::sync::Arc;

use rand::Rng as _;

use super::{dims2, gemm, matmul_raw, Tensor};
use crate::error::{Error, Result};
use crate::rng;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Relu,
    Sigmoid,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Unary(UnaryOp, Var),
    Binary(BinaryOp, Var, Var),
    /// `m×n` plus a broadcast `1×n` row.
    AddRow(Var, Var),
    Scale(Var, f64),
    /// Elementwise product with a fixed buffer (dropout masks, constants).
    Mask(Var, Arc<[f64]>),
    HCat(Vec<Var>),
    VCat(Vec<Var>),
    SliceCols(Var, usize, usize),
    Sum(Var),
}

impl Op {
    fn operands(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::Binary(_, a, b) | Op::AddRow(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Unary(_, a)
            | Op::Scale(a, _)
            | Op::Mask(a, _)
            | Op::SliceCols(a, _, _)
            | Op::Sum(a) => vec![*a],
            Op::HCat(v) | Op::VCat(v) => v.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitive operations.
///
/// Every operand of node `j` is a node with a smaller index, so a reverse
/// sweep over the node list is a valid backward order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn unary(op: UnaryOp, x: f64) -> f64 {
    match op {
        UnaryOp::Relu => {
            if x > 0.0 {
                x
            } else {
                0.0
            }
        }
        UnaryOp::Sigmoid => {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        }
        UnaryOp::Tanh => x.tanh(),
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

    /// Leaf that receives a gradient on [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, mut value: Tensor, requires_grad: bool) -> Var {
        value.set_grad(None);
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient stored on a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        dims2(self.shape(v)).expect("tape values are rank <= 2")
    }

    fn push(&mut self, op: Op) -> Var {
        let value = self.eval(&op);
        let requires_grad = op.operands().iter().any(|o| self.nodes[o.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check_matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        dims2(self.shape(v)).map_err(|_| Error::Shape {
            op,
            left: self.shape(v).to_vec(),
            right: vec![],
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, k1) = self.check_matrix("matmul", a)?;
        let (k2, _) = self.check_matrix("matmul", b)?;
        if k1 != k2 {
            return Err(Error::Shape {
                op: "matmul",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(self.push(Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.check_matrix("transpose", a)?;
        Ok(self.push(Op::Transpose(a)))
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Var {
        self.push(Op::Unary(op, a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Tanh, a)
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op: match op {
                    BinaryOp::Add => "add",
                    BinaryOp::Sub => "sub",
                    BinaryOp::Mul => "mul",
                },
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(self.push(Op::Binary(op, a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    /// Apply one elementwise op: unary ops take one operand, binary ops two.
    pub fn elementwise(&mut self, op: Elementwise, operands: &[Var]) -> Result<Var> {
        match (op, operands) {
            (Elementwise::Unary(u), [a]) => Ok(self.unary(u, *a)),
            (Elementwise::Binary(b), [x, y]) => self.binary(b, *x, *y),
            _ => Err(Error::InvalidArgument(format!(
                "{op:?} called with {} operands",
                operands.len()
            ))),
        }
    }

    /// `a + 1·bᵀ`: adds the row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, n) = self.check_matrix("add_row", a)?;
        let (br, bn) = self.check_matrix("add_row", b)?;
        if br != 1 || bn != n {
            return Err(Error::Shape {
                op: "add_row",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(self.push(Op::AddRow(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.push(Op::Scale(a, factor))
    }

    /// Elementwise product with a constant buffer of the same length.
    pub fn mask(&mut self, a: Var, mask: Arc<[f64]>) -> Result<Var> {
        if mask.len() != self.value(a).len() {
            return Err(Error::Shape {
                op: "mask",
                left: self.shape(a).to_vec(),
                right: vec![mask.len()],
            });
        }
        Ok(self.push(Op::Mask(a, mask)))
    }

    /// Inverted dropout. In training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1-rate)`; the mask
    /// depends only on `seed`. Inference mode (or `rate == 0`) is the identity.
    pub fn dropout(&mut self, a: Var, rate: f64, training: bool, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let mask = dropout_mask(self.value(a).len(), rate, seed);
        self.mask(a, mask.into())
    }

    pub fn hcat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::InvalidArgument("hcat of nothing".into()));
        };
        let (rows, _) = self.check_matrix("hcat", first)?;
        for &p in parts {
            let (r, _) = self.check_matrix("hcat", p)?;
            if r != rows {
                return Err(Error::Shape {
                    op: "hcat",
                    left: self.shape(first).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
        }
        Ok(self.push(Op::HCat(parts.to_vec())))
    }

    pub fn vcat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::InvalidArgument("vcat of nothing".into()));
        };
        let (_, cols) = self.check_matrix("vcat", first)?;
        for &p in parts {
            let (_, c) = self.check_matrix("vcat", p)?;
            if c != cols {
                return Err(Error::Shape {
                    op: "vcat",
                    left: self.shape(first).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
        }
        Ok(self.push(Op::VCat(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (_, cols) = self.check_matrix("slice_cols", a)?;
        if start + len > cols || len == 0 {
            return Err(Error::Shape {
                op: "slice_cols",
                left: self.shape(a).to_vec(),
                right: vec![start, len],
            });
        }
        Ok(self.push(Op::SliceCols(a, start, len)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Mean of squared differences between `pred` and `target`.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.sub(pred, target)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    fn eval(&self, op: &Op) -> Tensor {
        let val = |v: &Var| &self.nodes[v.0].value;
        match op {
            Op::Leaf => unreachable!("leaves are not evaluated"),
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let (_, n) = self.dims(*b);
                Tensor {
                    shape: vec![m, n],
                    data: matmul_raw(val(a).data(), val(b).data(), m, k, n),
                    grad: None,
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.dims(*a);
                let src = val(a).data();
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        out[j * m + i] = src[i * n + j];
                    }
                }
                Tensor {
                    shape: vec![n, m],
                    data: out,
                    grad: None,
                }
            }
            Op::Unary(u, a) => {
                let x = val(a);
                Tensor {
                    shape: x.shape.clone(),
                    data: x.data.iter().map(|&v| unary(*u, v)).collect(),
                    grad: None,
                }
            }
            Op::Binary(bop, a, b) => {
                let (x, y) = (val(a), val(b));
                let data = x
                    .data
                    .iter()
                    .zip(&y.data)
                    .map(|(&p, &q)| match bop {
                        BinaryOp::Add => p + q,
                        BinaryOp::Sub => p - q,
                        BinaryOp::Mul => p * q,
                    })
                    .collect();
                Tensor {
                    shape: x.shape.clone(),
                    data,
                    grad: None,
                }
            }
            Op::AddRow(a, b) => {
                let x = val(a);
                let row = val(b).data();
                let n = row.len();
                let mut data = x.data.clone();
                for chunk in data.chunks_mut(n) {
                    for (v, r) in chunk.iter_mut().zip(row) {
                        *v += r;
                    }
                }
                Tensor {
                    shape: x.shape.clone(),
                    data,
                    grad: None,
                }
            }
            Op::Scale(a, f) => {
                let x = val(a);
                Tensor {
                    shape: x.shape.clone(),
                    data: x.data.iter().map(|v| v * f).collect(),
                    grad: None,
                }
            }
            Op::Mask(a, m) => {
                let x = val(a);
                Tensor {
                    shape: x.shape.clone(),
                    data: x.data.iter().zip(m.iter()).map(|(v, k)| v * k).collect(),
                    grad: None,
                }
            }
            Op::HCat(parts) => {
                let rows = self.dims(parts[0]).0;
                let widths: Vec<usize> = parts.iter().map(|p| self.dims(*p).1).collect();
                let total: usize = widths.iter().sum();
                let mut data = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for (p, &w) in parts.iter().zip(&widths) {
                        data.extend_from_slice(&val(p).data[r * w..(r + 1) * w]);
                    }
                }
                Tensor {
                    shape: vec![rows, total],
                    data,
                    grad: None,
                }
            }
            Op::VCat(parts) => {
                let cols = self.dims(parts[0]).1;
                let mut data = Vec::new();
                let mut rows = 0;
                for p in parts {
                    rows += self.dims(*p).0;
                    data.extend_from_slice(val(p).data());
                }
                Tensor {
                    shape: vec![rows, cols],
                    data,
                    grad: None,
                }
            }
            Op::SliceCols(a, start, len) => {
                let (rows, cols) = self.dims(*a);
                let src = val(a).data();
                let mut data = Vec::with_capacity(rows * len);
                for r in 0..rows {
                    data.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
                }
                Tensor {
                    shape: vec![rows, *len],
                    data,
                    grad: None,
                }
            }
            Op::Sum(a) => Tensor::scalar(val(a).data.iter().sum()),
        }
    }

    /// Replace the value of a leaf. Call [`Tape::replay`] to propagate.
    pub fn set_leaf(&mut self, v: Var, value: Tensor) -> Result<()> {
        let node = &mut self.nodes[v.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::InvalidArgument("set_leaf on a non-leaf".into()));
        }
        if node.value.shape() != value.shape() {
            return Err(Error::Shape {
                op: "set_leaf",
                left: node.value.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        node.value = value;
        Ok(())
    }

    pub(crate) fn leaf_data_mut(&mut self, v: Var) -> &mut [f64] {
        debug_assert!(matches!(self.nodes[v.0].op, Op::Leaf));
        self.nodes[v.0].value.data_mut()
    }

    /// Recompute every non-leaf value from the current leaves, in record order.
    pub fn replay(&mut self) {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let value = self.eval(&op);
            self.nodes[i].value = value;
        }
    }

    /// Clear stored gradients so that `backward` may run again.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.set_grad(None);
        }
        self.backward_done = false;
    }

    /// Reverse sweep from a scalar `loss`. Afterwards every leaf created with
    /// `requires_grad` holds dLoss/dLeaf (zeros if the leaf is disconnected).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backprop(i, &g, &mut grads);
        }

        for (i, node) in self.nodes.iter_mut().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let g = grads
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; node.value.len()]);
                node.value.set_grad(Some(g));
            }
        }
        self.backward_done = true;
        Ok(())
    }

    fn backprop(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |v: &Var| nodes[v.0].requires_grad;
        fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], v: Var, len: usize) -> &'g mut [f64] {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }
        let len_of = |v: &Var| nodes[v.0].value.len();

        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let (_, n) = self.dims(*b);
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                if wants(a) {
                    let ga = slot(grads, *a, m * k);
                    gemm(m, n, k, g, false, bv, true, ga, true);
                }
                if wants(b) {
                    let gb = slot(grads, *b, k * n);
                    gemm(k, m, n, av, true, g, false, gb, true);
                }
            }
            Op::Transpose(a) => {
                if wants(a) {
                    let (m, n) = self.dims(*a);
                    let ga = slot(grads, *a, m * n);
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * n + c] += g[c * m + r];
                        }
                    }
                }
            }
            Op::Unary(u, a) => {
                if wants(a) {
                    let x = nodes[a.0].value.data();
                    let y = nodes[i].value.data();
                    let ga = slot(grads, *a, x.len());
                    for j in 0..x.len() {
                        let d = match u {
                            UnaryOp::Relu => {
                                if x[j] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            UnaryOp::Sigmoid => y[j] * (1.0 - y[j]),
                            UnaryOp::Tanh => 1.0 - y[j] * y[j],
                        };
                        ga[j] += g[j] * d;
                    }
                }
            }
            Op::Binary(bop, a, b) => {
                let n = len_of(a);
                match bop {
                    BinaryOp::Add | BinaryOp::Sub => {
                        if wants(a) {
                            let ga = slot(grads, *a, n);
                            ga.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                        }
                        if wants(b) {
                            let sign = if *bop == BinaryOp::Add { 1.0 } else { -1.0 };
                            let gb = slot(grads, *b, n);
                            gb.iter_mut().zip(g).for_each(|(d, x)| *d += sign * x);
                        }
                    }
                    BinaryOp::Mul => {
                        let av = nodes[a.0].value.data();
                        let bv = nodes[b.0].value.data();
                        if wants(a) {
                            let ga = slot(grads, *a, n);
                            for j in 0..n {
                                ga[j] += g[j] * bv[j];
                            }
                        }
                        if wants(b) {
                            let gb = slot(grads, *b, n);
                            for j in 0..n {
                                gb[j] += g[j] * av[j];
                            }
                        }
                    }
                }
            }
            Op::AddRow(a, b) => {
                if wants(a) {
                    let ga = slot(grads, *a, g.len());
                    ga.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                }
                if wants(b) {
                    let n = len_of(b);
                    let gb = slot(grads, *b, n);
                    for chunk in g.chunks(n) {
                        gb.iter_mut().zip(chunk).for_each(|(d, x)| *d += x);
                    }
                }
            }
            Op::Scale(a, f) => {
                if wants(a) {
                    let ga = slot(grads, *a, g.len());
                    ga.iter_mut().zip(g).for_each(|(d, x)| *d += f * x);
                }
            }
            Op::Mask(a, m) => {
                if wants(a) {
                    let ga = slot(grads, *a, g.len());
                    for j in 0..g.len() {
                        ga[j] += g[j] * m[j];
                    }
                }
            }
            Op::HCat(parts) => {
                let (rows, total) = self.dims(Var(i));
                let mut offset = 0;
                for p in parts {
                    let w = self.dims(*p).1;
                    if wants(p) {
                        let gp = slot(grads, *p, rows * w);
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            gp[r * w..(r + 1) * w]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, x)| *d += x);
                        }
                    }
                    offset += w;
                }
            }
            Op::VCat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = len_of(p);
                    if wants(p) {
                        let gp = slot(grads, *p, n);
                        gp.iter_mut()
                            .zip(&g[offset..offset + n])
                            .for_each(|(d, x)| *d += x);
                    }
                    offset += n;
                }
            }
            Op::SliceCols(a, start, len) => {
                if wants(a) {
                    let (rows, cols) = self.dims(*a);
                    let ga = slot(grads, *a, rows * cols);
                    for r in 0..rows {
                        let dst = &mut ga[r * cols + start..r * cols + start + len];
                        dst.iter_mut()
                            .zip(&g[r * len..(r + 1) * len])
                            .for_each(|(d, x)| *d += x);
                    }
                }
            }
            Op::Sum(a) => {
                if wants(a) {
                    let ga = slot(grads, *a, len_of(a));
                    ga.iter_mut().for_each(|d| *d += g[0]);
                }
            }
        }
    }
}

/// Either kind of elementwise primitive, for [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Unary(UnaryOp),
    Binary(BinaryOp),
}

/// Inverted-dropout mask of `len` entries drawn from `seed`.
pub fn dropout_mask(len: usize, rate: f64, seed: u64) -> Vec<f64> {
    let mut r = rng::rng_from(seed);
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if r.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}
