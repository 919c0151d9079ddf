use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Norm floor below which cosine inputs are reported as degenerate.
pub const COSINE_NORM_FLOOR: f64 = 1e-12;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    MseRows(Var, Var),
    L2Norm(Var),
    Cosine(Var, Var),
    RowCosine(Var, Var),
    Concat(Vec<Var>),
    Slice { src: Var, start: usize },
    GatherRows { src: Var, rows: Vec<usize> },
    Reshape(Var),
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::AddBias(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Mse(a, b)
            | Op::MseRows(a, b)
            | Op::Cosine(a, b)
            | Op::RowCosine(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::L2Norm(a)
            | Op::Reshape(a)
            | Op::Slice { src: a, .. }
            | Op::GatherRows { src: a, .. } => vec![*a],
            Op::Concat(parts) => parts.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Eagerly evaluated computation graph with a reverse-mode tape.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and `backward` only has to walk it in reverse.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node that required one.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when no gradient reached it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: strides describe in-bounds layouts of the slices checked by callers.
    unsafe {
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

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

fn cosine_parts(u: &[f64], v: &[f64]) -> Result<(f64, f64, f64)> {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu < COSINE_NORM_FLOOR || nv < COSINE_NORM_FLOOR {
        return Err(Error::DegenerateVelocity { norm: nu.min(nv) });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot, nu, nv))
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

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(Error::dim("matmul", format!("{:?} x {:?}", ta.shape(), tb.shape())));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), (k as isize, 1), tb.data(), (n as isize, 1), &mut out, 0.0);
        let value = Tensor::new(vec![m, n], out)?;
        self.push("matmul", value, Op::MatMul(a, b))
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(name, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(name, value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `x[m, n] + bias[n]`, the one broadcast the engine supports.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = tx.cols();
        if tb.len() != n || tb.rows() != 1 && tb.shape().len() > 1 {
            return Err(Error::dim("add_bias", format!("{:?} + {:?}", tx.shape(), tb.shape())));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("add_bias", value, Op::AddBias(x, bias))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let value = self.value(x).map(|v| v * c);
        self.push("scale", value, Op::Scale(x, c))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push("relu", value, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(f64::tanh);
        self.push("tanh", value, Op::Tanh(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(x))
    }

    /// Mean of squared differences over all entries.
    pub fn mse(&mut self, x: Var, y: Var) -> Result<Var> {
        let (tx, ty) = (self.value(x), self.value(y));
        same_shape("mse", tx, ty)?;
        let s = tx.data().iter().zip(ty.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            / tx.len() as f64;
        self.push("mse", Tensor::scalar(s), Op::Mse(x, y))
    }

    /// Per-row mean of squared differences: `[m, n], [m, n] -> [m]`.
    pub fn mse_rows(&mut self, x: Var, y: Var) -> Result<Var> {
        let (tx, ty) = (self.value(x), self.value(y));
        same_shape("mse_rows", tx, ty)?;
        let n = tx.cols();
        let data = tx
            .data()
            .chunks(n)
            .zip(ty.data().chunks(n))
            .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / n as f64)
            .collect();
        let value = Tensor::new(vec![tx.rows()], data)?;
        self.push("mse_rows", value, Op::MseRows(x, y))
    }

    pub fn l2norm(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).norm();
        self.push("l2norm", Tensor::scalar(n), Op::L2Norm(x))
    }

    /// Cosine similarity of two whole tensors, read as flat vectors.
    pub fn cosine(&mut self, u: Var, v: Var) -> Result<Var> {
        let (tu, tv) = (self.value(u), self.value(v));
        same_shape("cosine", tu, tv)?;
        let (dot, nu, nv) = cosine_parts(tu.data(), tv.data())?;
        self.push("cosine", Tensor::scalar(dot / (nu * nv)), Op::Cosine(u, v))
    }

    /// Row-wise cosine similarity: `[m, n], [m, n] -> [m]`.
    pub fn row_cosine(&mut self, u: Var, v: Var) -> Result<Var> {
        let (tu, tv) = (self.value(u), self.value(v));
        same_shape("row_cosine", tu, tv)?;
        let n = tu.cols();
        let mut data = Vec::with_capacity(tu.rows());
        for (a, b) in tu.data().chunks(n).zip(tv.data().chunks(n)) {
            let (dot, na, nb) = cosine_parts(a, b)?;
            data.push(dot / (na * nb));
        }
        let value = Tensor::new(vec![tu.rows()], data)?;
        self.push("row_cosine", value, Op::RowCosine(u, v))
    }

    /// Column-wise concatenation of matrices sharing a row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::dim("concat", "empty input list"))?;
        let rows = self.value(*first).rows();
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            return Err(Error::dim("concat", "row counts differ"));
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row_slice(r));
            }
        }
        let value = Tensor::new(vec![rows, total], data)?;
        self.push("concat", value, Op::Concat(parts.to_vec()))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        let n = t.cols();
        if start >= end || end > n {
            return Err(Error::dim("slice", format!("columns {start}..{end} of {n}")));
        }
        let mut data = Vec::with_capacity(t.rows() * (end - start));
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row_slice(r)[start..end]);
        }
        let value = Tensor::new(vec![t.rows(), end - start], data)?;
        self.push("slice", value, Op::Slice { src: x, start })
    }

    /// Rows of a matrix picked by index; repeats allowed.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return Err(Error::dim("gather_rows", format!("expected a matrix, got {:?}", t.shape())));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= t.rows()) {
            return Err(Error::dim("gather_rows", format!("row {bad} of {}", t.rows())));
        }
        let mut data = Vec::with_capacity(rows.len() * t.cols());
        for &r in rows {
            data.extend_from_slice(t.row_slice(r));
        }
        let value = Tensor::new(vec![rows.len(), t.cols()], data)?;
        self.push("gather_rows", value, Op::GatherRows { src: x, rows: rows.to_vec() })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape.to_vec())?;
        self.push("reshape", value, Op::Reshape(x))
    }

    /// Passes the value through and blocks every gradient.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push_raw(value, Op::Leaf, false)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::filled(self.value(root).shape(), 1.0));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[i].take() else { continue };
            self.propagate(node, &upstream, &mut grads)?;
            grads[i] = Some(upstream);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, up: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let g = up.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.wants(*a) {
                    // dA = dC · Bᵀ
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g, (n as isize, 1), tb.data(), (1, n as isize), &mut da, 0.0);
                    self.accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), da)?);
                }
                if self.wants(*b) {
                    // dB = Aᵀ · dC
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), (1, k as isize), g, (n as isize, 1), &mut db, 0.0);
                    self.accumulate(grads, *b, Tensor::new(tb.shape().to_vec(), db)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, up.clone());
                self.accumulate(grads, *b, up.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, up.clone());
                self.accumulate(grads, *b, up.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let d = g.iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), d)?);
                }
                if self.wants(*b) {
                    let d = g.iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, Tensor::new(tb.shape().to_vec(), d)?);
                }
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, up.clone());
                if self.wants(*bias) {
                    let tb = self.value(*bias);
                    let n = tb.len();
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::new(tb.shape().to_vec(), db)?);
                }
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, up.map(|v| v * c)),
            Op::Relu(x) => {
                let tx = self.value(*x);
                let d = g.iter().zip(tx.data()).map(|(u, &v)| if v > 0.0 { *u } else { 0.0 }).collect();
                self.accumulate(grads, *x, Tensor::new(tx.shape().to_vec(), d)?);
            }
            Op::Tanh(x) => {
                let d = g.iter().zip(node.value.data()).map(|(u, y)| u * (1.0 - y * y)).collect();
                self.accumulate(grads, *x, Tensor::new(node.value.shape().to_vec(), d)?);
            }
            Op::Sum(x) => {
                let tx = self.value(*x);
                self.accumulate(grads, *x, Tensor::filled(tx.shape(), g[0]));
            }
            Op::Mean(x) => {
                let tx = self.value(*x);
                self.accumulate(grads, *x, Tensor::filled(tx.shape(), g[0] / tx.len() as f64));
            }
            Op::Mse(x, y) => {
                let (tx, ty) = (self.value(*x), self.value(*y));
                let c = 2.0 * g[0] / tx.len() as f64;
                let d: Vec<f64> = tx.data().iter().zip(ty.data()).map(|(a, b)| c * (a - b)).collect();
                if self.wants(*y) {
                    let neg = d.iter().map(|v| -v).collect();
                    self.accumulate(grads, *y, Tensor::new(ty.shape().to_vec(), neg)?);
                }
                self.accumulate(grads, *x, Tensor::new(tx.shape().to_vec(), d)?);
            }
            Op::MseRows(x, y) => {
                let (tx, ty) = (self.value(*x), self.value(*y));
                let n = tx.cols();
                let mut d = Vec::with_capacity(tx.len());
                for (r, (a, b)) in tx.data().chunks(n).zip(ty.data().chunks(n)).enumerate() {
                    let c = 2.0 * g[r] / n as f64;
                    d.extend(a.iter().zip(b).map(|(p, q)| c * (p - q)));
                }
                if self.wants(*y) {
                    let neg = d.iter().map(|v| -v).collect();
                    self.accumulate(grads, *y, Tensor::new(ty.shape().to_vec(), neg)?);
                }
                self.accumulate(grads, *x, Tensor::new(tx.shape().to_vec(), d)?);
            }
            Op::L2Norm(x) => {
                let tx = self.value(*x);
                let n = node.value.data()[0];
                let d = if n > 0.0 { tx.map(|v| g[0] * v / n) } else { Tensor::zeros(tx.shape()) };
                self.accumulate(grads, *x, d);
            }
            Op::Cosine(u, v) => {
                let (tu, tv) = (self.value(*u), self.value(*v));
                let (du, dv) = cosine_grads(tu.data(), tv.data(), g[0])?;
                self.accumulate(grads, *u, Tensor::new(tu.shape().to_vec(), du)?);
                self.accumulate(grads, *v, Tensor::new(tv.shape().to_vec(), dv)?);
            }
            Op::RowCosine(u, v) => {
                let (tu, tv) = (self.value(*u), self.value(*v));
                let n = tu.cols();
                let mut du = Vec::with_capacity(tu.len());
                let mut dv = Vec::with_capacity(tv.len());
                for (r, (a, b)) in tu.data().chunks(n).zip(tv.data().chunks(n)).enumerate() {
                    let (ga, gb) = cosine_grads(a, b, g[r])?;
                    du.extend(ga);
                    dv.extend(gb);
                }
                self.accumulate(grads, *u, Tensor::new(tu.shape().to_vec(), du)?);
                self.accumulate(grads, *v, Tensor::new(tv.shape().to_vec(), dv)?);
            }
            Op::Concat(parts) => {
                let rows = up.rows();
                let total = up.cols();
                let mut offset = 0;
                for p in parts {
                    let tp = self.value(*p);
                    let w = tp.cols();
                    if self.wants(*p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        self.accumulate(grads, *p, Tensor::new(tp.shape().to_vec(), d)?);
                    }
                    offset += w;
                }
            }
            Op::Slice { src, start } => {
                let ts = self.value(*src);
                let (n, w) = (ts.cols(), up.cols());
                let mut d = vec![0.0; ts.len()];
                for r in 0..ts.rows() {
                    d[r * n + start..r * n + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                self.accumulate(grads, *src, Tensor::new(ts.shape().to_vec(), d)?);
            }
            Op::GatherRows { src, rows } => {
                let ts = self.value(*src);
                let n = ts.cols();
                let mut d = vec![0.0; ts.len()];
                for (i, &r) in rows.iter().enumerate() {
                    for (acc, v) in d[r * n..(r + 1) * n].iter_mut().zip(&g[i * n..(i + 1) * n]) {
                        *acc += v;
                    }
                }
                self.accumulate(grads, *src, Tensor::new(ts.shape().to_vec(), d)?);
            }
            Op::Reshape(x) => {
                let tx = self.value(*x);
                self.accumulate(grads, *x, up.reshaped(tx.shape().to_vec())?);
            }
        }
        Ok(())
    }
}

/// Quotient-rule derivative of `cos(u, v)` scaled by the upstream gradient.
fn cosine_grads(u: &[f64], v: &[f64], up: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let (dot, nu, nv) = cosine_parts(u, v)?;
    let c = dot / (nu * nv);
    let inv = 1.0 / (nu * nv);
    let du = u.iter().zip(v).map(|(a, b)| up * (b * inv - c * a / (nu * nu))).collect();
    let dv = u.iter().zip(v).map(|(a, b)| up * (a * inv - c * b / (nv * nv))).collect();
    Ok((du, dv))
}
