//! Dense reverse-mode automatic differentiation over row-major matrices.
//!
//! A [`Graph`] is a tape of nodes, each holding a [`Tensor`] value and the
//! operation that produced it. [`Graph::backward`] appends the gradient
//! computation to the same tape using the same operations, so gradients are
//! themselves differentiable. The critic gradient penalty relies on this.
//!
//! Piecewise operations (ReLU masks, max-pool argmax, nearest-neighbor
//! matchings) freeze their discrete choice as constants, which gives the
//! almost-everywhere derivative.

use std::sync::Arc;

use crate::error::{FscError, Result};

/// Row-major `rows x cols` matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn scalar(v: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(FscError::SizeMismatch { left: data.len(), right: rows * cols });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self { rows: 1, cols: data.len(), data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a {}x{} tensor", self.rows, self.cols);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.shape(), other.shape(), "elementwise shape mismatch");
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.rows, "matmul {}x{} by {}x{}", self.rows, self.cols, other.rows, other.cols);
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Tensor::zeros(m, n);
        if m == 0 || n == 0 || k == 0 {
            return out;
        }
        // SAFETY: the slices hold exactly m*k, k*n and m*n elements laid out
        // with the row/column strides passed here.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                self.data.as_ptr(),
                k as isize,
                1,
                other.data.as_ptr(),
                n as isize,
                1,
                0.0,
                out.data.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        out
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRow(Var, Var),
    Sigmoid(Var),
    Exp(Var),
    Recip(Var),
    Sqrt(Var),
    SumRows(Var),
    SumCols(Var),
    SumAll(Var),
    BroadcastRows(Var),
    BroadcastCols(Var),
    Fill(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    PadCols(Var, usize),
    Reshape(Var),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    Pick(Var, Arc<[usize]>),
    ScatterPick(Var, Arc<[usize]>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Tape of tensor operations.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; gradients never flow into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a), &[a])
    }

    /// `a[n x m] + b[1 x m]` with `b` repeated on every row.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(bv.rows, 1, "add_row expects a row vector");
        assert_eq!(av.cols, bv.cols, "add_row width mismatch");
        let mut v = av.clone();
        for r in 0..v.rows {
            for c in 0..v.cols {
                v.data[r * v.cols + c] += bv.data[c];
            }
        }
        self.push(v, Op::AddRow(a, b), &[a, b])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a), &[a])
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 / x);
        self.push(v, Op::Recip(a), &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sqrt);
        self.push(v, Op::Sqrt(a), &[a])
    }

    /// Column sums: `[n x m] -> [1 x m]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut v = Tensor::zeros(1, av.cols);
        for r in 0..av.rows {
            for c in 0..av.cols {
                v.data[c] += av.data[r * av.cols + c];
            }
        }
        self.push(v, Op::SumRows(a), &[a])
    }

    /// Row sums: `[n x m] -> [n x 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = (0..av.rows).map(|r| av.row(r).iter().sum()).collect();
        let v = Tensor { rows: av.rows, cols: 1, data };
        self.push(v, Op::SumCols(a), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).data.iter().sum());
        self.push(v, Op::SumAll(a), &[a])
    }

    /// `[1 x m] -> [n x m]`.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows, 1, "broadcast_rows expects a row vector");
        let mut data = Vec::with_capacity(n * av.cols);
        for _ in 0..n {
            data.extend_from_slice(&av.data);
        }
        let v = Tensor { rows: n, cols: av.cols, data };
        self.push(v, Op::BroadcastRows(a), &[a])
    }

    /// `[n x 1] -> [n x m]`.
    pub fn broadcast_cols(&mut self, a: Var, m: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.cols, 1, "broadcast_cols expects a column vector");
        let data = av.data.iter().flat_map(|&x| std::iter::repeat_n(x, m)).collect();
        let v = Tensor { rows: av.rows, cols: m, data };
        self.push(v, Op::BroadcastCols(a), &[a])
    }

    /// `[1 x 1] -> [rows x cols]`.
    pub fn fill(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let v = Tensor::filled(rows, cols, self.value(a).item());
        self.push(v, Op::Fill(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                v.data[r * cols + off..r * cols + off + pv.cols].copy_from_slice(pv.row(r));
            }
            off += pv.cols;
        }
        self.push(v, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let av = self.value(a);
        assert!(start + width <= av.cols, "slice_cols out of range");
        let mut v = Tensor::zeros(av.rows, width);
        for r in 0..av.rows {
            v.data[r * width..(r + 1) * width].copy_from_slice(&av.row(r)[start..start + width]);
        }
        self.push(v, Op::SliceCols(a, start), &[a])
    }

    /// Embeds `a` into a zero matrix `total` columns wide at column `start`.
    pub fn pad_cols(&mut self, a: Var, start: usize, total: usize) -> Var {
        let av = self.value(a);
        assert!(start + av.cols <= total, "pad_cols out of range");
        let mut v = Tensor::zeros(av.rows, total);
        for r in 0..av.rows {
            v.data[r * total + start..r * total + start + av.cols].copy_from_slice(av.row(r));
        }
        self.push(v, Op::PadCols(a, start), &[a])
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.len(), rows * cols, "reshape size mismatch");
        let v = Tensor { rows, cols, data: av.data.clone() };
        self.push(v, Op::Reshape(a), &[a])
    }

    /// `out[i] = a[idx[i]]` row-wise.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Var {
        let av = self.value(a);
        let mut data = Vec::with_capacity(idx.len() * av.cols);
        for &i in idx.iter() {
            data.extend_from_slice(av.row(i));
        }
        let v = Tensor { rows: idx.len(), cols: av.cols, data };
        self.push(v, Op::GatherRows(a, idx), &[a])
    }

    /// `out[idx[i]] += a[i]` into `n` zero rows.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Arc<[usize]>, n: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows, idx.len());
        let mut v = Tensor::zeros(n, av.cols);
        for (i, &t) in idx.iter().enumerate() {
            for c in 0..av.cols {
                v.data[t * av.cols + c] += av.data[i * av.cols + c];
            }
        }
        self.push(v, Op::ScatterAddRows(a, idx), &[a])
    }

    /// Per-column row selection: `out[s][c] = a[idx[s * m + c]][c]`.
    pub fn pick(&mut self, a: Var, idx: Arc<[usize]>) -> Var {
        let av = self.value(a);
        let m = av.cols;
        assert_eq!(idx.len() % m.max(1), 0);
        let s = if m == 0 { 0 } else { idx.len() / m };
        let mut v = Tensor::zeros(s, m);
        for (k, &r) in idx.iter().enumerate() {
            v.data[k] = av.data[r * m + k % m];
        }
        self.push(v, Op::Pick(a, idx), &[a])
    }

    /// Adjoint of [`pick`](Self::pick): `out[idx[s * m + c]][c] += a[s][c]`.
    pub fn scatter_pick(&mut self, a: Var, idx: Arc<[usize]>, n: usize) -> Var {
        let av = self.value(a);
        let m = av.cols;
        assert_eq!(idx.len(), av.len());
        let mut v = Tensor::zeros(n, m);
        for (k, &r) in idx.iter().enumerate() {
            v.data[r * m + k % m] += av.data[k];
        }
        self.push(v, Op::ScatterPick(a, idx), &[a])
    }

    // ----- composites -------------------------------------------------

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    /// `x` where positive, `slope * x` elsewhere.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { slope });
        let m = self.constant(mask);
        self.mul(a, m)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let r = self.recip(b);
        self.mul(a, r)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// `x W + b` with `x: n x in`, `W: in x out`, `b: 1 x out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let y = self.matmul(x, w);
        match b {
            Some(b) => self.add_row(y, b),
            None => y,
        }
    }

    /// Softmax of every row.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut shift = av.clone();
        for r in 0..av.rows {
            let m = av.row(r).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            shift.data[r * av.cols..(r + 1) * av.cols].iter_mut().for_each(|x| *x = m);
        }
        let cols = av.cols;
        let s = self.constant(shift);
        let z = self.sub(a, s);
        let e = self.exp(z);
        let sum = self.sum_cols(e);
        let inv = self.recip(sum);
        let inv = self.broadcast_cols(inv, cols);
        self.mul(e, inv)
    }

    /// Softmax of every column.
    pub fn softmax_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut shift = av.clone();
        for c in 0..av.cols {
            let m = (0..av.rows).map(|r| av.data[r * av.cols + c]).fold(f64::NEG_INFINITY, f64::max);
            for r in 0..av.rows {
                shift.data[r * av.cols + c] = m;
            }
        }
        let rows = av.rows;
        let s = self.constant(shift);
        let z = self.sub(a, s);
        let e = self.exp(z);
        let sum = self.sum_rows(e);
        let inv = self.recip(sum);
        let inv = self.broadcast_rows(inv, rows);
        self.mul(e, inv)
    }

    /// Divides each row by `eps + row sum`.
    pub fn l1_normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let cols = self.value(a).cols;
        let s = self.sum_cols(a);
        let s = self.add_scalar(s, eps);
        let inv = self.recip(s);
        let inv = self.broadcast_cols(inv, cols);
        self.mul(a, inv)
    }

    /// Divides each column by `eps + column sum`.
    pub fn l1_normalize_cols(&mut self, a: Var, eps: f64) -> Var {
        let rows = self.value(a).rows;
        let s = self.sum_rows(a);
        let s = self.add_scalar(s, eps);
        let inv = self.recip(s);
        let inv = self.broadcast_rows(inv, rows);
        self.mul(a, inv)
    }

    /// Column-wise max over consecutive groups of `group` rows:
    /// `[s*group x m] -> [s x m]`. Ties go to the earliest row.
    pub fn segment_max(&mut self, a: Var, group: usize) -> Var {
        let av = self.value(a);
        assert!(group > 0 && av.rows % group == 0, "segment_max: {} rows in groups of {group}", av.rows);
        let (m, s) = (av.cols, av.rows / group);
        let mut idx = Vec::with_capacity(s * m);
        for seg in 0..s {
            for c in 0..m {
                let mut best = seg * group;
                for r in seg * group + 1..(seg + 1) * group {
                    if av.data[r * m + c] > av.data[best * m + c] {
                        best = r;
                    }
                }
                idx.push(best);
            }
        }
        self.pick(a, idx.into())
    }

    /// Column-wise max over all rows: `[n x m] -> [1 x m]`.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let n = self.value(a).rows;
        self.segment_max(a, n)
    }

    // ----- reverse pass -------------------------------------------------

    /// Gradients of the scalar `loss` with respect to each of `wrt`.
    ///
    /// The gradient computation is recorded on the tape, so the returned
    /// nodes can be differentiated again. Inputs that `loss` does not depend
    /// on get `None`.
    pub fn backward(&mut self, loss: Var, wrt: &[Var]) -> Vec<Option<Var>> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let one = self.constant(Tensor::filled(1, 1, 1.0));
        let one = if self.value(loss).shape() == (1, 1) { one } else { self.fill(one, 1, 1) };
        let mut adj: Vec<Option<Var>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(one);

        for id in (0..=loss.0).rev() {
            let g = match adj[id] {
                Some(g) if self.nodes[id].needs_grad => g,
                _ => continue,
            };
            let op = self.nodes[id].op.clone();
            let out = Var(id);
            let contributions: Vec<(Var, Var)> = match op {
                Op::Leaf => vec![],
                Op::MatMul(a, b) => {
                    let mut c = vec![];
                    if self.needs_grad(a) {
                        let bt = self.transpose(b);
                        c.push((a, self.matmul(g, bt)));
                    }
                    if self.needs_grad(b) {
                        let at = self.transpose(a);
                        c.push((b, self.matmul(at, g)));
                    }
                    c
                }
                Op::Transpose(a) => vec![(a, self.transpose(g))],
                Op::Add(a, b) => vec![(a, g), (b, g)],
                Op::Sub(a, b) => {
                    let mut c = vec![(a, g)];
                    if self.needs_grad(b) {
                        c.push((b, self.scale(g, -1.0)));
                    }
                    c
                }
                Op::Mul(a, b) => {
                    let mut c = vec![];
                    if self.needs_grad(a) {
                        c.push((a, self.mul(g, b)));
                    }
                    if self.needs_grad(b) {
                        c.push((b, self.mul(g, a)));
                    }
                    c
                }
                Op::Scale(a, k) => vec![(a, self.scale(g, k))],
                Op::AddScalar(a) => vec![(a, g)],
                Op::AddRow(a, b) => {
                    let mut c = vec![(a, g)];
                    if self.needs_grad(b) {
                        c.push((b, self.sum_rows(g)));
                    }
                    c
                }
                Op::Sigmoid(a) => {
                    let neg = self.scale(out, -1.0);
                    let one_minus = self.add_scalar(neg, 1.0);
                    let d = self.mul(out, one_minus);
                    vec![(a, self.mul(g, d))]
                }
                Op::Exp(a) => vec![(a, self.mul(g, out))],
                Op::Recip(a) => {
                    let sq = self.mul(out, out);
                    let t = self.mul(g, sq);
                    vec![(a, self.scale(t, -1.0))]
                }
                Op::Sqrt(a) => {
                    let r = self.recip(out);
                    let t = self.mul(g, r);
                    vec![(a, self.scale(t, 0.5))]
                }
                Op::SumRows(a) => {
                    let n = self.value(a).rows;
                    vec![(a, self.broadcast_rows(g, n))]
                }
                Op::SumCols(a) => {
                    let m = self.value(a).cols;
                    vec![(a, self.broadcast_cols(g, m))]
                }
                Op::SumAll(a) => {
                    let (r, c) = self.shape(a);
                    vec![(a, self.fill(g, r, c))]
                }
                Op::BroadcastRows(a) => vec![(a, self.sum_rows(g))],
                Op::BroadcastCols(a) => vec![(a, self.sum_cols(g))],
                Op::Fill(a) => vec![(a, self.sum_all(g))],
                Op::ConcatCols(parts) => {
                    let mut c = vec![];
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(p).cols;
                        if self.needs_grad(p) {
                            c.push((p, self.slice_cols(g, off, w)));
                        }
                        off += w;
                    }
                    c
                }
                Op::SliceCols(a, start) => {
                    let total = self.value(a).cols;
                    vec![(a, self.pad_cols(g, start, total))]
                }
                Op::PadCols(a, start) => {
                    let w = self.value(a).cols;
                    vec![(a, self.slice_cols(g, start, w))]
                }
                Op::Reshape(a) => {
                    let (r, c) = self.shape(a);
                    vec![(a, self.reshape(g, r, c))]
                }
                Op::GatherRows(a, idx) => {
                    let n = self.value(a).rows;
                    vec![(a, self.scatter_add_rows(g, idx, n))]
                }
                Op::ScatterAddRows(a, idx) => vec![(a, self.gather_rows(g, idx))],
                Op::Pick(a, idx) => {
                    let n = self.value(a).rows;
                    vec![(a, self.scatter_pick(g, idx, n))]
                }
                Op::ScatterPick(a, idx) => vec![(a, self.pick(g, idx))],
            };
            for (p, d) in contributions {
                if !self.needs_grad(p) {
                    continue;
                }
                adj[p.0] = Some(match adj[p.0] {
                    Some(prev) => self.add(prev, d),
                    None => d,
                });
            }
        }
        wrt.iter().map(|w| adj.get(w.0).copied().flatten()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::from_vec(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_matches_hand_product() {
        let a = t(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t(3, 2, &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        assert_eq!(a.matmul(&b), t(2, 2, &[58.0, 64.0, 139.0, 154.0]));
    }

    #[test]
    fn linear_gradients() {
        let mut g = Graph::new();
        let x = g.variable(t(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let w = g.variable(t(2, 1, &[0.5, -1.0]));
        let y = g.matmul(x, w);
        let l = g.sum_all(y);
        let grads = g.backward(l, &[x, w]);
        assert_eq!(g.value(grads[0].unwrap()), &t(2, 2, &[0.5, -1.0, 0.5, -1.0]));
        assert_eq!(g.value(grads[1].unwrap()), &t(2, 1, &[4.0, 6.0]));
    }

    #[test]
    fn max_rows_routes_gradient_to_argmax() {
        let mut g = Graph::new();
        let x = g.variable(t(3, 2, &[1.0, 5.0, 3.0, 5.0, 2.0, 0.0]));
        let m = g.max_rows(x);
        assert_eq!(g.value(m), &t(1, 2, &[3.0, 5.0]));
        let l = g.sum_all(m);
        let gx = g.backward(l, &[x])[0].unwrap();
        assert_eq!(g.value(gx), &t(3, 2, &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn second_derivative_of_cube() {
        // f(x) = x^3 -> f'(x) = 3x^2 -> f''(x) = 6x
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(2.0));
        let x2 = g.mul(x, x);
        let x3 = g.mul(x2, x);
        let d1 = g.backward(x3, &[x])[0].unwrap();
        assert_eq!(g.value(d1).item(), 12.0);
        let d2 = g.backward(d1, &[x])[0].unwrap();
        assert_eq!(g.value(d2).item(), 12.0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.constant(t(2, 3, &[1.0, 2.0, 3.0, -1000.0, 0.0, 1000.0]));
        let s = g.softmax_rows(x);
        for r in 0..2 {
            assert!((g.value(s).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn unused_input_has_no_gradient() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(1.0));
        let y = g.variable(Tensor::scalar(2.0));
        let l = g.scale(x, 3.0);
        let grads = g.backward(l, &[x, y]);
        assert!(grads[1].is_none());
        assert_eq!(g.value(grads[0].unwrap()).item(), 3.0);
    }
}
