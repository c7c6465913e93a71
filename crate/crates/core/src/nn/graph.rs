//! Tape-based reverse-mode differentiation over 2-D tensors.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients.
//! Parameters enter through [`Graph::bind`], which returns the variables to
//! use in the forward pass and later to collect gradients.

use super::params::ParamSet;
use super::tensor::{matmul, matmul_nt_acc, matmul_tn_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// Elementwise product with a constant of the same shape.
    MulConst(Var, Tensor),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    VStack(Vec<Var>),
    Slice { x: Var, start: usize },
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    /// False for constants and anything computed only from constants.
    needs_grad: bool,
}

/// Variables bound to the tensors of one [`ParamSet`], in set order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, idx: usize) -> Var {
        self.vars[idx]
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Leaf => true,
            Op::Linear { x, w, b } => [x, w, b].iter().any(|v| self.needs(**v)),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => self.needs(*a) || self.needs(*b),
            Op::Scale(a, _)
            | Op::MulConst(a, _)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Slice { x: a, .. }
            | Op::Sum(a) => self.needs(*a),
            Op::Concat(parts) | Op::VStack(parts) => parts.iter().any(|p| self.needs(*p)),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A constant or input; gradients are still collected for it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let v = self.push(t, Op::Leaf);
        self.nodes[v.0].needs_grad = false;
        v
    }

    pub fn bind(&mut self, params: &ParamSet) -> Bound {
        let vars = params.tensors().iter().map(|t| self.input(t.clone())).collect();
        Bound { vars }
    }

    /// Like [`Graph::bind`], but the parameters are held fixed: no gradient
    /// flows into them and [`Graph::param_grads`] reports zeros.
    pub fn bind_frozen(&mut self, params: &ParamSet) -> Bound {
        let vars = params.tensors().iter().map(|t| self.constant(t.clone())).collect();
        Bound { vars }
    }

    fn shape_err<T>(&self, what: &str, a: Var, b: Var) -> Result<T> {
        Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            self.value(a).shape(),
            self.value(b).shape()
        )))
    }

    /// `x w + b` with `x: [r, k]`, `w: [k, n]`, `b: [1, n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (r, k, n) = (xv.rows(), xv.cols(), wv.cols());
        if wv.rows() != k {
            return self.shape_err("linear weight", x, w);
        }
        if bv.rows() != 1 || bv.cols() != n {
            return self.shape_err("linear bias", w, b);
        }
        let mut out = matmul(xv.data(), wv.data(), r, k, n);
        for row in out.chunks_mut(n) {
            for (o, bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let value = Tensor::matrix(r, n, out)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return self.shape_err("matmul", a, b);
        }
        let (r, k, n) = (av.rows(), av.cols(), bv.cols());
        let value = Tensor::matrix(r, n, matmul(av.data(), bv.data(), r, k, n))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        if !self.value(a).same_shape(self.value(b)) {
            return self.shape_err(what, a, b);
        }
        let value = self.value(a).zip_map(self.value(b), f);
        Ok(self.push(value, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.push(value, Op::Scale(a, c))
    }

    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        if !self.value(a).same_shape(&c) {
            return Err(Error::Shape(format!(
                "mul_const: {:?} vs {:?}",
                self.value(a).shape(),
                c.shape()
            )));
        }
        let value = self.value(a).zip_map(&c, |x, y| x * y);
        Ok(self.push(value, Op::MulConst(a, c)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    /// Column-wise concatenation of equally tall matrices.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::Shape("concat: row counts differ".into()));
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let value = Tensor::matrix(rows, total, out)?;
        Ok(self.push(value, Op::Concat(parts.to_vec())))
    }

    /// Row-wise stacking of equally wide matrices.
    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            return Err(Error::Shape("vstack: column counts differ".into()));
        }
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
            rows += self.value(p).rows();
        }
        let value = Tensor::matrix(rows, cols, out)?;
        Ok(self.push(value, Op::VStack(parts.to_vec())))
    }

    /// Columns `start..end` of `x`.
    pub fn slice(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if start >= end || end > xv.cols() {
            return Err(Error::Shape(format!(
                "slice {start}..{end} of {:?}",
                xv.shape()
            )));
        }
        let rows = xv.rows();
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&xv.row_slice(r)[start..end]);
        }
        let value = Tensor::matrix(rows, end - start, out)?;
        Ok(self.push(value, Op::Slice { x, start }))
    }

    /// Sum of all entries as a `[1, 1]` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Reverse pass from a scalar. Gradients of earlier passes are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Shape(format!("backward needs a scalar, got {:?}", lv.shape())));
        }
        if !lv.all_finite() {
            return Err(Error::NonFinite(format!("loss is {}", lv.data()[0])));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Linear { x, w, b } => {
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.nodes[w.0].value;
                    let (r, k, n) = (xv.rows(), xv.cols(), wv.cols());
                    if self.needs(*w) {
                        let mut gw = Tensor::zeros(wv.shape());
                        matmul_tn_acc(gw.data_mut(), xv.data(), g.data(), r, k, n);
                        accumulate(&mut grads, *w, gw);
                    }
                    if self.needs(*x) {
                        let mut gx = Tensor::zeros(xv.shape());
                        matmul_nt_acc(gx.data_mut(), g.data(), wv.data(), r, k, n);
                        accumulate(&mut grads, *x, gx);
                    }
                    if self.needs(*b) {
                        let mut gb = Tensor::zeros(&[1, n]);
                        for row in g.data().chunks(n) {
                            for (o, v) in gb.data_mut().iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::MatMul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let (r, k, n) = (av.rows(), av.cols(), bv.cols());
                    if self.needs(*a) {
                        let mut ga = Tensor::zeros(av.shape());
                        matmul_nt_acc(ga.data_mut(), g.data(), bv.data(), r, k, n);
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let mut gb = Tensor::zeros(bv.shape());
                        matmul_tn_acc(gb.data_mut(), av.data(), g.data(), r, k, n);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|v| -v));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(&self.nodes[b.0].value, |x, y| x * y);
                    let gb = g.zip_map(&self.nodes[a.0].value, |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    accumulate(&mut grads, *a, g.map(|v| v * c));
                }
                Op::MulConst(a, c) => {
                    accumulate(&mut grads, *a, g.zip_map(c, |x, y| x * y));
                }
                Op::Relu(a) => {
                    let ga = g.zip_map(&self.nodes[a.0].value, |gv, x| if x > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Concat(parts) => {
                    let rows = g.rows();
                    let total = g.cols();
                    let mut offset = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.cols();
                        let mut gp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            gp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        offset += w;
                        accumulate(&mut grads, *p, Tensor::matrix(rows, w, gp)?);
                    }
                }
                Op::VStack(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let pv = &self.nodes[p.0].value;
                        let n = pv.len();
                        let gp = Tensor::new(pv.shape().to_vec(), g.data()[offset..offset + n].to_vec())?;
                        offset += n;
                        accumulate(&mut grads, *p, gp);
                    }
                }
                Op::Slice { x, start } => {
                    let xv = &self.nodes[x.0].value;
                    let (rows, cols) = (xv.rows(), xv.cols());
                    let w = g.cols();
                    let mut gx = Tensor::zeros(xv.shape());
                    for r in 0..rows {
                        gx.data_mut()[r * cols + start..r * cols + start + w]
                            .copy_from_slice(g.row_slice(r));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sum(a) => {
                    let gv = g.data()[0];
                    let ga = Tensor::full(self.nodes[a.0].value.shape(), gv);
                    accumulate(&mut grads, *a, ga);
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last [`Graph::backward`] loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients for every tensor of a bound parameter set, zero where the
    /// loss does not depend on it. Fails on any non-finite entry.
    pub fn param_grads(&self, bound: &Bound) -> Result<Vec<Tensor>> {
        bound
            .vars
            .iter()
            .map(|&v| {
                let g = match self.grad(v) {
                    Some(g) => g.clone(),
                    None => Tensor::zeros(self.value(v).shape()),
                };
                if g.all_finite() {
                    Ok(g)
                } else {
                    Err(Error::NonFinite(format!("gradient of node {} has non-finite entries", v.0)))
                }
            })
            .collect()
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
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
