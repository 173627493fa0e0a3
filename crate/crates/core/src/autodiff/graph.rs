use std::sync::atomic::{AtomicU64, Ordering};

use super::ops::{self, Activation, MatRef};
use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    graph: u64,
    index: usize,
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Constant,
    // copy of a parent value; backward treats it as a leaf
    StopGradient,
    MatMul(usize, usize),
    Affine(usize, usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulCol(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Square(usize),
    Exp(usize),
    Act(usize, Activation),
    Sum(usize),
    Mean(usize),
    SumCols(usize),
    ConcatCols(usize, usize),
    Minimum(usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode tape.
///
/// Nodes are appended in evaluation order, so parents always precede their
/// children and a single reverse sweep visits every node once.
#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

fn matrix_dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
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
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::usage("variable was not recorded on this graph"));
        }
        Ok(v.index)
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// Differentiable input.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        let i = self.idx(v)?;
        Ok(&self.nodes[i].value)
    }

    /// Same value as `x`, but gradients do not flow through it.
    pub fn stop_gradient(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        let value = self.nodes[i].value.clone();
        Ok(self.push(value, Op::StopGradient, false))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let (m, k) = matrix_dims(va);
        let (k2, n) = matrix_dims(vb);
        if va.ndim() != 2 || vb.ndim() != 2 || k != k2 {
            return Err(Error::shape("matmul", format!("[m, {k}] x [{k}, n]"), format!("{:?} x {:?}", va.shape(), vb.shape())));
        }
        let mut out = vec![0.0; m * n];
        ops::gemm(m, k, n, MatRef::normal(va.data(), k), MatRef::normal(vb.data(), n), &mut out, 0.0);
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(ia, ib), rg))
    }

    /// `x * w + bias` with x: [n, d_in], w: [d_in, d_out], bias: [d_out].
    pub fn affine(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let (ix, iw, ib) = (self.idx(x)?, self.idx(w)?, self.idx(bias)?);
        let (vx, vw, vb) = (&self.nodes[ix].value, &self.nodes[iw].value, &self.nodes[ib].value);
        let (n, d_in) = matrix_dims(vx);
        let (d_in2, d_out) = matrix_dims(vw);
        if vx.ndim() != 2 || vw.ndim() != 2 || d_in != d_in2 || vb.len() != d_out {
            return Err(Error::shape(
                "affine",
                format!("[n, {d_in2}] x [{d_in2}, {d_out}] + [{d_out}]"),
                format!("{:?} x {:?} + {:?}", vx.shape(), vw.shape(), vb.shape()),
            ));
        }
        let out = ops::affine(vx.data(), n, d_in, vw.data(), vb.data());
        let rg = self.rg(ix) || self.rg(iw) || self.rg(ib);
        Ok(self.push(Tensor::matrix(n, d_out, out)?, Op::Affine(ix, iw, ib), rg))
    }

    fn binary_same_shape(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: fn(usize, usize) -> Op) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.shape() != vb.shape() {
            return Err(Error::shape(name, format!("{:?}", va.shape()), format!("{:?}", vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(value, op(ia, ib), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "minimum", |x, y| if x <= y { x } else { y }, Op::Minimum)
    }

    /// Broadcast-add a length-m vector to every row of an [n, m] matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ia, ir) = (self.idx(a)?, self.idx(row)?);
        let (va, vr) = (&self.nodes[ia].value, &self.nodes[ir].value);
        let m = va.cols();
        if va.ndim() != 2 || vr.len() != m {
            return Err(Error::shape("add_row", format!("[n, {m}] + [{m}]"), format!("{:?} + {:?}", va.shape(), vr.shape())));
        }
        let mut data = va.data().to_vec();
        for chunk in data.chunks_mut(m) {
            chunk.iter_mut().zip(vr.data()).for_each(|(x, b)| *x += b);
        }
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(ia) || self.rg(ir);
        Ok(self.push(value, Op::AddRow(ia, ir), rg))
    }

    /// Scale row `i` of an [n, m] matrix by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (ia, ic) = (self.idx(a)?, self.idx(col)?);
        let (va, vc) = (&self.nodes[ia].value, &self.nodes[ic].value);
        let (n, m) = matrix_dims(va);
        if va.ndim() != 2 || vc.len() != n {
            return Err(Error::shape("mul_col", format!("[{n}, m] * [{n}, 1]"), format!("{:?} * {:?}", va.shape(), vc.shape())));
        }
        let mut data = va.data().to_vec();
        for (chunk, &c) in data.chunks_mut(m).zip(vc.data()) {
            chunk.iter_mut().for_each(|x| *x *= c);
        }
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(ia) || self.rg(ic);
        Ok(self.push(value, Op::MulCol(ia, ic), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: fn(usize) -> Op) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.map(f);
        let rg = self.rg(ia);
        Ok(self.push(value, op(ia), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.map(|x| x * c);
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Scale(ia, c), rg))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, |x| x + c, Op::AddScalar)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x * x, Op::Square)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::exp, Op::Exp)
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.map(|x| act.apply(x));
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Act(ia, act), rg))
    }

    /// Sum of all entries, as a 0-d scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let s = self.nodes[ia].value.data().iter().sum();
        let rg = self.rg(ia);
        Ok(self.push(Tensor::scalar(s), Op::Sum(ia), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        if v.is_empty() {
            return Err(Error::usage("mean of an empty tensor"));
        }
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(ia);
        Ok(self.push(Tensor::scalar(s), Op::Mean(ia), rg))
    }

    /// Row sums of an [n, m] matrix, as [n, 1].
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        let (n, m) = matrix_dims(v);
        let data: Vec<f64> = v.data().chunks(m.max(1)).map(|r| r.iter().sum()).collect();
        let rg = self.rg(ia);
        Ok(self.push(Tensor::matrix(n, 1, data)?, Op::SumCols(ia), rg))
    }

    /// `[a | b]` for matrices with equal row counts.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let (n, ma) = matrix_dims(va);
        let (n2, mb) = matrix_dims(vb);
        if va.ndim() != 2 || vb.ndim() != 2 || n != n2 {
            return Err(Error::shape("concat_cols", format!("{n} rows"), format!("{:?} | {:?}", va.shape(), vb.shape())));
        }
        let mut data = Vec::with_capacity(n * (ma + mb));
        for r in 0..n {
            data.extend_from_slice(va.row(r));
            data.extend_from_slice(vb.row(r));
        }
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(Tensor::matrix(n, ma + mb, data)?, Op::ConcatCols(ia, ib), rg))
    }

    /// Gradients of a scalar `output` with respect to each of `wrt`.
    ///
    /// Inputs that do not influence `output` (or are constants) get zeros.
    pub fn grad(&self, output: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let out = self.idx(output)?;
        if self.nodes[out].value.len() != 1 {
            return Err(Error::usage(format!(
                "grad needs a scalar output, got shape {:?}",
                self.nodes[out].value.shape()
            )));
        }
        let targets = wrt.iter().map(|&v| self.idx(v)).collect::<Result<Vec<_>>>()?;
        let adj = self.backward(out);
        Ok(targets
            .into_iter()
            .map(|i| match &adj[i] {
                Some(g) if self.nodes[i].requires_grad => g.clone(),
                _ => Tensor::zeros(self.nodes[i].value.shape()),
            })
            .collect())
    }

    fn backward(&self, out: usize) -> Vec<Option<Tensor>> {
        let mut adj: Vec<Option<Tensor>> = vec![None; out + 1];
        if !self.nodes[out].requires_grad {
            return adj;
        }
        adj[out] = Some(Tensor::full(self.nodes[out].value.shape(), 1.0));

        for i in (0..=out).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match node.op {
                Op::Input | Op::Constant | Op::StopGradient => {}
                Op::MatMul(a, b) => {
                    let va = &self.nodes[a].value;
                    let vb = &self.nodes[b].value;
                    let (m, k) = matrix_dims(va);
                    let n = vb.cols();
                    if self.rg(a) {
                        let mut da = vec![0.0; m * k];
                        ops::gemm(m, n, k, MatRef::normal(g.data(), n), MatRef::transposed(vb.data(), n), &mut da, 0.0);
                        accumulate(&mut adj, a, va.shape(), &da);
                    }
                    if self.rg(b) {
                        let mut db = vec![0.0; k * n];
                        ops::gemm(k, m, n, MatRef::transposed(va.data(), k), MatRef::normal(g.data(), n), &mut db, 0.0);
                        accumulate(&mut adj, b, vb.shape(), &db);
                    }
                }
                Op::Affine(x, w, b) => {
                    let vx = &self.nodes[x].value;
                    let vw = &self.nodes[w].value;
                    let (n, d_in) = matrix_dims(vx);
                    let d_out = vw.cols();
                    if self.rg(x) {
                        let mut dx = vec![0.0; n * d_in];
                        ops::gemm(n, d_out, d_in, MatRef::normal(g.data(), d_out), MatRef::transposed(vw.data(), d_out), &mut dx, 0.0);
                        accumulate(&mut adj, x, vx.shape(), &dx);
                    }
                    if self.rg(w) {
                        let mut dw = vec![0.0; d_in * d_out];
                        ops::gemm(d_in, n, d_out, MatRef::transposed(vx.data(), d_in), MatRef::normal(g.data(), d_out), &mut dw, 0.0);
                        accumulate(&mut adj, w, vw.shape(), &dw);
                    }
                    if self.rg(b) {
                        let db = column_sums(g.data(), d_out);
                        accumulate(&mut adj, b, self.nodes[b].value.shape(), &db);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(a) {
                        accumulate(&mut adj, a, g.shape(), g.data());
                    }
                    if self.rg(b) {
                        accumulate(&mut adj, b, g.shape(), g.data());
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(a) {
                        accumulate(&mut adj, a, g.shape(), g.data());
                    }
                    if self.rg(b) {
                        let neg: Vec<f64> = g.data().iter().map(|v| -v).collect();
                        accumulate(&mut adj, b, g.shape(), &neg);
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                    if self.rg(a) {
                        let d: Vec<f64> = g.data().iter().zip(vb.data()).map(|(g, y)| g * y).collect();
                        accumulate(&mut adj, a, g.shape(), &d);
                    }
                    if self.rg(b) {
                        let d: Vec<f64> = g.data().iter().zip(va.data()).map(|(g, x)| g * x).collect();
                        accumulate(&mut adj, b, g.shape(), &d);
                    }
                }
                Op::Minimum(a, b) => {
                    let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                    let picks_a: Vec<bool> = va.data().iter().zip(vb.data()).map(|(x, y)| x <= y).collect();
                    if self.rg(a) {
                        let d: Vec<f64> = g.data().iter().zip(&picks_a).map(|(g, &p)| if p { *g } else { 0.0 }).collect();
                        accumulate(&mut adj, a, g.shape(), &d);
                    }
                    if self.rg(b) {
                        let d: Vec<f64> = g.data().iter().zip(&picks_a).map(|(g, &p)| if p { 0.0 } else { *g }).collect();
                        accumulate(&mut adj, b, g.shape(), &d);
                    }
                }
                Op::AddRow(a, r) => {
                    if self.rg(a) {
                        accumulate(&mut adj, a, g.shape(), g.data());
                    }
                    if self.rg(r) {
                        let d = column_sums(g.data(), g.cols());
                        accumulate(&mut adj, r, self.nodes[r].value.shape(), &d);
                    }
                }
                Op::MulCol(a, c) => {
                    let (va, vc) = (&self.nodes[a].value, &self.nodes[c].value);
                    let m = va.cols();
                    if self.rg(a) {
                        let mut d = g.data().to_vec();
                        for (chunk, &s) in d.chunks_mut(m).zip(vc.data()) {
                            chunk.iter_mut().for_each(|x| *x *= s);
                        }
                        accumulate(&mut adj, a, va.shape(), &d);
                    }
                    if self.rg(c) {
                        let d: Vec<f64> = g
                            .data()
                            .chunks(m)
                            .zip(va.data().chunks(m))
                            .map(|(gr, ar)| gr.iter().zip(ar).map(|(x, y)| x * y).sum())
                            .collect();
                        accumulate(&mut adj, c, vc.shape(), &d);
                    }
                }
                Op::Scale(a, c) => {
                    if self.rg(a) {
                        let d: Vec<f64> = g.data().iter().map(|v| v * c).collect();
                        accumulate(&mut adj, a, g.shape(), &d);
                    }
                }
                Op::AddScalar(a) => {
                    if self.rg(a) {
                        accumulate(&mut adj, a, g.shape(), g.data());
                    }
                }
                Op::Square(a) => {
                    if self.rg(a) {
                        let va = &self.nodes[a].value;
                        let d: Vec<f64> = g.data().iter().zip(va.data()).map(|(g, x)| 2.0 * x * g).collect();
                        accumulate(&mut adj, a, g.shape(), &d);
                    }
                }
                Op::Exp(a) => {
                    if self.rg(a) {
                        let d: Vec<f64> = g.data().iter().zip(node.value.data()).map(|(g, y)| g * y).collect();
                        accumulate(&mut adj, a, g.shape(), &d);
                    }
                }
                Op::Act(a, act) => {
                    if self.rg(a) {
                        let va = &self.nodes[a].value;
                        let d: Vec<f64> = g
                            .data()
                            .iter()
                            .zip(va.data().iter().zip(node.value.data()))
                            .map(|(g, (&x, &y))| g * act.derivative(x, y))
                            .collect();
                        accumulate(&mut adj, a, g.shape(), &d);
                    }
                }
                Op::Sum(a) => {
                    if self.rg(a) {
                        let va = &self.nodes[a].value;
                        let d = vec![g.item(); va.len()];
                        accumulate(&mut adj, a, va.shape(), &d);
                    }
                }
                Op::Mean(a) => {
                    if self.rg(a) {
                        let va = &self.nodes[a].value;
                        let d = vec![g.item() / va.len() as f64; va.len()];
                        accumulate(&mut adj, a, va.shape(), &d);
                    }
                }
                Op::SumCols(a) => {
                    if self.rg(a) {
                        let va = &self.nodes[a].value;
                        let m = va.cols();
                        let mut d = Vec::with_capacity(va.len());
                        for &gi in g.data() {
                            d.extend(std::iter::repeat(gi).take(m));
                        }
                        accumulate(&mut adj, a, va.shape(), &d);
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (ma, mb) = (self.nodes[a].value.cols(), self.nodes[b].value.cols());
                    let rows = g.rows();
                    if self.rg(a) {
                        let mut d = Vec::with_capacity(rows * ma);
                        for r in 0..rows {
                            d.extend_from_slice(&g.row(r)[..ma]);
                        }
                        accumulate(&mut adj, a, self.nodes[a].value.shape(), &d);
                    }
                    if self.rg(b) {
                        let mut d = Vec::with_capacity(rows * mb);
                        for r in 0..rows {
                            d.extend_from_slice(&g.row(r)[ma..]);
                        }
                        accumulate(&mut adj, b, self.nodes[b].value.shape(), &d);
                    }
                }
            }
            adj[i] = Some(g);
        }
        adj
    }
}

fn column_sums(data: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for row in data.chunks(cols) {
        out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
    }
    out
}

fn accumulate(adj: &mut [Option<Tensor>], i: usize, shape: &[usize], delta: &[f64]) {
    match &mut adj[i] {
        Some(t) => t.data_mut().iter_mut().zip(delta).for_each(|(a, d)| *a += d),
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), delta.to_vec()).expect("adjoint shape matches its node"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let dx = g.grad(y, &[x]).unwrap();
        assert_eq!(dx[0].item(), 6.0);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(3.0));
        let c = g.constant(Tensor::scalar(5.0));
        let y = g.square(c).unwrap();
        let dx = g.grad(y, &[x]).unwrap();
        assert_eq!(dx[0].item(), 0.0);
    }

    #[test]
    fn stop_gradient_freezes_one_factor() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(2.0));
        let s = g.stop_gradient(x).unwrap();
        assert_eq!(g.value(s).unwrap(), g.value(x).unwrap());
        let y = g.mul(s, x).unwrap();
        let dx = g.grad(y, &[x]).unwrap();
        assert_eq!(dx[0].item(), 2.0);
    }

    #[test]
    fn foreign_variable_is_a_usage_error() {
        let mut g1 = Graph::new();
        let mut g2 = Graph::new();
        let x = g1.input(Tensor::scalar(1.0));
        let y = g2.input(Tensor::scalar(1.0));
        let s = g2.square(y).unwrap();
        assert!(matches!(g2.grad(s, &[x]), Err(Error::Usage(_))));
        assert!(matches!(g2.square(x), Err(Error::Usage(_))));
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1.0, 2.0]));
        let y = g.square(x).unwrap();
        assert!(matches!(g.grad(y, &[x]), Err(Error::Usage(_))));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.matmul(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn stopped_kernel_weights_carry_no_gradient() {
        // sum_j stop(k(a_j, x)) * R(a_j) does not depend on x once the weights are frozen
        let mut g = Graph::new();
        let x = g.input(Tensor::matrix(1, 1, vec![0.3]).unwrap());
        let anchors = g.constant(Tensor::matrix(1, 1, vec![-0.5]).unwrap());
        let diff = g.sub(x, anchors).unwrap();
        let sq = g.square(diff).unwrap();
        let neg = g.scale(sq, -0.5).unwrap();
        let k = g.exp(neg).unwrap();
        let k_stop = g.stop_gradient(k).unwrap();
        let reward = g.constant(Tensor::matrix(1, 1, vec![1.7]).unwrap());
        let weighted = g.mul(k_stop, reward).unwrap();
        let total = g.sum(weighted).unwrap();
        let dx = g.grad(total, &[x]).unwrap();
        assert_eq!(dx[0].item(), 0.0);

        // without the stop the gradient is k * R * -(x - a)
        let live = g.mul(k, reward).unwrap();
        let total = g.sum(live).unwrap();
        let dx = g.grad(total, &[x]).unwrap();
        let kv = (-0.5f64 * 0.8 * 0.8).exp();
        assert!((dx[0].item() - kv * 1.7 * -0.8).abs() < 1e-15);
    }
}
