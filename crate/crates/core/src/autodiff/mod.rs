//! Reverse-mode automatic differentiation over small dense matrices.
//!
//! A [`Tape`] records every operation as a node holding its value; calling
//! [`Tape::backward`] on a scalar node walks the tape in reverse and returns
//! the gradient of that scalar with respect to every node. Everything is a
//! row-major matrix; batches are rows.

mod adam;
mod tensor;

pub use adam::{adam_step, Adam, AdamConfig};
pub use tensor::Tensor;

use crate::critic::{quantile_huber_grad, quantile_huber_loss};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Affine(Var, f64),
    Square(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    SoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    RowDot(Var, Vec<f64>),
    QuantileHuber(Var, Vec<f64>, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn matmul_into(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    // a is m x k (or k x m stored when a_t), b is k x n (or n x k stored when b_t)
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        // SAFETY: slices are sized by the caller for the stated dimensions and strides.
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
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
        Tape { nodes: Vec::with_capacity(256) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// Constant or parameter input (rank-1 tensors become a single row).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let (r, c) = (t.rows(), t.cols());
        let value = if t.shape().len() == 2 { t } else { Tensor::matrix_unchecked(r, c, t.into_data()) };
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        Ok(self.leaf(Tensor::matrix(rows, cols, data)?))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (k2, n)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(Error::Shape(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        Ok(self.push(Tensor::matrix_unchecked(m, n, out), Op::MatMul(a, b)))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(Error::Shape(format!("elementwise {da:?} vs {db:?}")));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| f(*x, *y)).collect();
        Ok(self.push(Tensor::matrix_unchecked(da.0, da.1, data), op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `x + bias` with a `1 x c` bias repeated over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let ((r, c), (br, bc)) = (self.dims(x), self.dims(bias));
        if br != 1 || bc != c {
            return Err(Error::Shape(format!("bias {br}x{bc} for {r}x{c}")));
        }
        let b = self.value(bias).data();
        let data = self.value(x).data().chunks(c).flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y)).collect();
        Ok(self.push(Tensor::matrix_unchecked(r, c, data), Op::AddRow(x, bias)))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.dims(x);
        let data = self.value(x).data().iter().map(|v| f(*v)).collect();
        self.push(Tensor::matrix_unchecked(r, c, data), op)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.map(x, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu(x, slope))
    }

    /// `scale * x + shift`
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.map(x, |v| scale * v + shift, Op::Affine(x, scale))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map(x, |v| v * v, Op::Square(x))
    }

    /// Column-wise concatenation; all parts share the row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.dims(parts[0]).0;
        if parts.iter().any(|p| self.dims(*p).0 != rows) {
            return Err(Error::Shape("concat row mismatch".into()));
        }
        let cols: usize = parts.iter().map(|p| self.dims(*p).1).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                let c = self.dims(*p).1;
                data.extend_from_slice(&self.value(*p).data()[r * c..(r + 1) * c]);
            }
        }
        Ok(self.push(Tensor::matrix_unchecked(rows, cols, data), Op::Concat(parts.to_vec())))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start >= end || end > c {
            return Err(Error::Shape(format!("slice {start}..{end} of {c} columns")));
        }
        let src = self.value(x).data();
        let data = (0..r).flat_map(|i| src[i * c + start..i * c + end].iter().copied()).collect();
        Ok(self.push(Tensor::matrix_unchecked(r, end - start, data), Op::SliceCols(x, start)))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let data = self
            .value(x)
            .data()
            .chunks(c)
            .flat_map(crate::action::softmax_slice)
            .collect();
        self.push(Tensor::matrix_unchecked(r, c, data), Op::SoftmaxRows(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// Per-row weighted sum `x @ coeffs`, giving an `r x 1` column.
    pub fn row_dot(&mut self, x: Var, coeffs: Vec<f64>) -> Result<Var> {
        let (r, c) = self.dims(x);
        if coeffs.len() != c {
            return Err(Error::Shape(format!("{} coefficients for {c} columns", coeffs.len())));
        }
        let data = self.value(x).data().chunks(c).map(|row| row.iter().zip(&coeffs).map(|(a, b)| a * b).sum()).collect();
        Ok(self.push(Tensor::matrix_unchecked(r, 1, data), Op::RowDot(x, coeffs)))
    }

    /// Per-row quantile-Huber loss of predictions `theta` (`r x N`) against
    /// fixed `targets` (row-major `r x N'`), giving an `r x 1` column.
    pub fn quantile_huber(&mut self, theta: Var, targets: Vec<f64>, kappa: f64) -> Result<Var> {
        let (r, n) = self.dims(theta);
        if r == 0 || targets.len() % r != 0 {
            return Err(Error::Shape(format!("{} targets for {r} rows", targets.len())));
        }
        if !(kappa > 0.0) {
            return Err(Error::invalid("kappa", format!("must be > 0, got {kappa}")));
        }
        let m = targets.len() / r;
        let th = self.value(theta).data();
        let data = (0..r).map(|i| quantile_huber_loss(&th[i * n..(i + 1) * n], &targets[i * m..(i + 1) * m], kappa)).collect();
        Ok(self.push(Tensor::matrix_unchecked(r, 1, data), Op::QuantileHuber(theta, targets, kappa)))
    }

    /// Gradient of scalar `root` with respect to every node. Consumes the tape.
    pub fn backward(self, root: Var) -> Result<Gradients> {
        let (r, c) = self.dims(root);
        if r * c != 1 {
            return Err(Error::NonScalarRoot { rows: r, cols: c });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, g: impl IntoIterator<Item = f64>) {
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(g).for_each(|(e, x)| *e += x),
                slot => *slot = Some(g.into_iter().collect()),
            }
        }

        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = node.value.data();
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ((m, k), (_, n)) = (self.dims(*a), self.dims(*b));
                    let mut ga = grads[a.0].take().unwrap_or_else(|| vec![0.0; m * k]);
                    matmul_into(m, n, k, &g, false, self.value(*b).data(), true, &mut ga, 1.0);
                    grads[a.0] = Some(ga);
                    let mut gb = grads[b.0].take().unwrap_or_else(|| vec![0.0; k * n]);
                    matmul_into(k, m, n, self.value(*a).data(), true, &g, false, &mut gb, 1.0);
                    grads[b.0] = Some(gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.iter().copied());
                    acc(&mut grads, *b, g.iter().copied());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.iter().copied());
                    acc(&mut grads, *b, g.iter().map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    acc(&mut grads, *a, g.iter().zip(vb).map(|(x, y)| x * y));
                    acc(&mut grads, *b, g.iter().zip(va).map(|(x, y)| x * y));
                }
                Op::AddRow(x, bias) => {
                    let c = self.dims(*bias).1;
                    acc(&mut grads, *x, g.iter().copied());
                    let mut gb = vec![0.0; c];
                    for row in g.chunks(c) {
                        gb.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                    }
                    acc(&mut grads, *bias, gb);
                }
                Op::Sigmoid(x) => acc(&mut grads, *x, g.iter().zip(out).map(|(g, s)| g * s * (1.0 - s))),
                Op::Tanh(x) => acc(&mut grads, *x, g.iter().zip(out).map(|(g, t)| g * (1.0 - t * t))),
                Op::LeakyRelu(x, slope) => {
                    let vx = self.value(*x).data();
                    acc(&mut grads, *x, g.iter().zip(vx).map(|(g, v)| if *v > 0.0 { *g } else { g * slope }));
                }
                Op::Affine(x, scale) => acc(&mut grads, *x, g.iter().map(|v| v * scale)),
                Op::Square(x) => {
                    let vx = self.value(*x).data();
                    acc(&mut grads, *x, g.iter().zip(vx).map(|(g, v)| 2.0 * g * v));
                }
                Op::Concat(parts) => {
                    let rows = node.value.rows();
                    let total = node.value.cols();
                    let mut offset = 0;
                    for p in parts {
                        let c = self.dims(*p).1;
                        let gp: Vec<f64> = (0..rows).flat_map(|r| g[r * total + offset..r * total + offset + c].iter().copied()).collect();
                        acc(&mut grads, *p, gp);
                        offset += c;
                    }
                }
                Op::SliceCols(x, start) => {
                    let (r, c) = self.dims(*x);
                    let w = node.value.cols();
                    let mut gx = vec![0.0; r * c];
                    for i in 0..r {
                        gx[i * c + start..i * c + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SoftmaxRows(x) => {
                    let c = node.value.cols();
                    let mut gx = Vec::with_capacity(g.len());
                    for (gr, sr) in g.chunks(c).zip(out.chunks(c)) {
                        let dot: f64 = gr.iter().zip(sr).map(|(a, b)| a * b).sum();
                        gx.extend(gr.iter().zip(sr).map(|(gi, si)| si * (gi - dot)));
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Sum(x) => {
                    let n = self.value(*x).numel();
                    acc(&mut grads, *x, std::iter::repeat_n(g[0], n));
                }
                Op::Mean(x) => {
                    let n = self.value(*x).numel();
                    acc(&mut grads, *x, std::iter::repeat_n(g[0] / n as f64, n));
                }
                Op::RowDot(x, coeffs) => {
                    let gx: Vec<f64> = g.iter().flat_map(|gr| coeffs.iter().map(move |c| gr * c)).collect();
                    acc(&mut grads, *x, gx);
                }
                Op::QuantileHuber(theta, targets, kappa) => {
                    let (r, n) = self.dims(*theta);
                    let m = targets.len() / r;
                    let th = self.value(*theta).data();
                    let mut gx = Vec::with_capacity(r * n);
                    for i in 0..r {
                        let d = quantile_huber_grad(&th[i * n..(i + 1) * n], &targets[i * m..(i + 1) * m], *kappa);
                        gx.extend(d.into_iter().map(|v| v * g[i]));
                    }
                    acc(&mut grads, *theta, gx);
                }
            }
        }

        let shapes = self.nodes.iter().map(|n| (n.value.rows(), n.value.cols())).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Result of [`Tape::backward`]. Only leaves keep their gradients.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the root w.r.t. leaf `v`, or `None` if `v` does not influence the root.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Like [`Gradients::get`] but zero-filled when absent.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => vec![0.0; self.shapes[v.0].0 * self.shapes[v.0].1],
        }
    }
}

/// Named, ordered parameter tensors of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.names.push(name.into());
        self.tensors.push(t);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Registers every tensor as a leaf on `tape`.
    pub fn attach(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Copies gradients for `vars` (as returned by [`ParamSet::attach`]) into the tensors' slots.
    pub fn store_grads(&mut self, vars: &[Var], grads: &Gradients) {
        for (t, v) in self.tensors.iter_mut().zip(vars) {
            let _ = t.set_grad(grads.wrt(*v));
        }
    }

    pub fn collect_grads(vars: &[Var], grads: &Gradients) -> Vec<Vec<f64>> {
        vars.iter().map(|v| grads.wrt(*v)).collect()
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.names == other.names && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.same_shape(b))
    }

    pub fn map_values(&mut self, f: impl Fn(f64) -> f64) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v = f(*v));
        }
    }

    /// Flattened view of all values, in tensor order.
    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}
