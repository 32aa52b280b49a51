//! Reverse-mode automatic differentiation over small dense row-major matrices.
//!
//! A [`Tape`] records every operation; [`Tape::backward`] walks it in reverse
//! and returns the gradient of a scalar output with respect to every node.

use alloc::vec;
use alloc::vec::Vec;

use crate::fmath;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data does not match its shape");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self::new(rows, cols, vec![v; rows * cols])
    }

    pub fn column(data: Vec<f64>) -> Self {
        Self::new(data.len(), 1, data)
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(1, 1, vec![v])
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::new(self.rows, self.cols, self.data.iter().map(|x| f(*x)).collect())
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert!(self.same_shape(other));
        Tensor::new(
            self.rows,
            self.cols,
            self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        )
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }
}

fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.rows, "matmul shape mismatch");
    let mut out = vec![0.0; a.rows * b.cols];
    for i in 0..a.rows {
        let o = &mut out[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let x = a.data[i * a.cols + k];
            if x == 0.0 {
                continue;
            }
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            o.iter_mut().zip(brow).for_each(|(o, w)| *o += x * w);
        }
    }
    Tensor::new(a.rows, b.cols, out)
}

/// `a^T b`
fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.rows, b.rows);
    let mut out = vec![0.0; a.cols * b.cols];
    for r in 0..a.rows {
        let brow = &b.data[r * b.cols..(r + 1) * b.cols];
        for i in 0..a.cols {
            let x = a.data[r * a.cols + i];
            if x == 0.0 {
                continue;
            }
            out[i * b.cols..(i + 1) * b.cols]
                .iter_mut()
                .zip(brow)
                .for_each(|(o, y)| *o += x * y);
        }
    }
    Tensor::new(a.cols, b.cols, out)
}

/// `a b^T`
fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.cols);
    let mut out = vec![0.0; a.rows * b.rows];
    for i in 0..a.rows {
        let arow = &a.data[i * a.cols..(i + 1) * a.cols];
        for j in 0..b.rows {
            let brow = &b.data[j * b.cols..(j + 1) * b.cols];
            out[i * b.rows + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::new(a.rows, b.rows, out)
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Softplus(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Concat(Vec<Var>),
    Col(Var, usize),
    Sum(Var),
    Mean(Var),
    RepeatRows(Var, usize),
    MeanGroups(Var, usize),
    LogMeanExpGroups(Var, usize),
    LogSoftmaxRows(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Grads(Vec<Option<Tensor>>);

impl Grads {
    /// Gradient of `v`; `None` if the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0.get(v.0).and_then(Option::as_ref)
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Input or parameter node.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Copy of `v`'s value with no gradient path back to `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.leaf(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        debug_assert_eq!(t.data.len(), 1);
        t.data[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = matmul(self.value(a), self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// Adds the `1 x m` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (x, r) = (self.value(a), self.value(b));
        assert!(r.rows == 1 && r.cols == x.cols, "add_row shape mismatch");
        let mut out = x.clone();
        out.data
            .chunks_mut(x.cols)
            .for_each(|row| row.iter_mut().zip(&r.data).for_each(|(o, b)| *o += b));
        self.push(out, Op::AddRow(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x * k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x + k);
        self.push(v, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(fmath::sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(fmath::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(fmath::ln);
        self.push(v, Op::Ln(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(fmath::softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Elementwise clamp; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    /// Column-wise concatenation of tensors with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                let t = self.value(*p);
                assert_eq!(t.rows, rows, "concat row mismatch");
                data.extend_from_slice(&t.data[r * t.cols..(r + 1) * t.cols]);
            }
        }
        self.push(Tensor::new(rows, cols, data), Op::Concat(parts.to_vec()))
    }

    pub fn col(&mut self, a: Var, j: usize) -> Var {
        let t = self.value(a);
        let data = (0..t.rows).map(|r| t.at(r, j)).collect();
        self.push(Tensor::column(data), Op::Col(a, j))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data.iter().sum::<f64>() / t.data.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Repeats every row `m` times in place: rows `r*m .. r*m+m` copy row `r`.
    pub fn repeat_rows(&mut self, a: Var, m: usize) -> Var {
        let t = self.value(a);
        let mut data = Vec::with_capacity(t.data.len() * m);
        for row in t.data.chunks(t.cols) {
            for _ in 0..m {
                data.extend_from_slice(row);
            }
        }
        let v = Tensor::new(t.rows * m, t.cols, data);
        self.push(v, Op::RepeatRows(a, m))
    }

    /// Averages consecutive groups of `m` rows of a column.
    pub fn mean_groups(&mut self, a: Var, m: usize) -> Var {
        let t = self.value(a);
        assert!(t.cols == 1 && t.rows % m == 0);
        let data = t.data.chunks(m).map(|g| g.iter().sum::<f64>() / m as f64).collect();
        self.push(Tensor::column(data), Op::MeanGroups(a, m))
    }

    /// `log(mean(exp(.)))` over consecutive groups of `m` rows of a column.
    pub fn log_mean_exp_groups(&mut self, a: Var, m: usize) -> Var {
        let t = self.value(a);
        assert!(t.cols == 1 && t.rows % m == 0);
        let data = t
            .data
            .chunks(m)
            .map(|g| crate::reasoning::logsumexp_unchecked(g) - fmath::ln(m as f64))
            .collect();
        self.push(Tensor::column(data), Op::LogMeanExpGroups(a, m))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut data = t.data.clone();
        data.chunks_mut(t.cols).for_each(|row| {
            let l = crate::reasoning::logsumexp_unchecked(row);
            row.iter_mut().for_each(|x| *x -= l);
        });
        let v = Tensor::new(t.rows, t.cols, data);
        self.push(v, Op::LogSoftmaxRows(a))
    }

    /// Gradients of the scalar `out` with respect to every node.
    pub fn backward(&self, out: Var) -> Grads {
        assert_eq!(self.value(out).data.len(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Tensor::scalar(1.0));
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Grads(grads)
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, d: Tensor| match &mut grads[v.0] {
            Some(t) => t.add_assign(&d),
            slot @ None => *slot = Some(d),
        };
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(*a, matmul_nt(g, val(*b)));
                acc(*b, matmul_tn(val(*a), g));
            }
            Op::AddRow(a, b) => {
                let mut rb = vec![0.0; g.cols];
                g.data
                    .chunks(g.cols)
                    .for_each(|row| rb.iter_mut().zip(row).for_each(|(s, x)| *s += x));
                acc(*a, g.clone());
                acc(*b, Tensor::new(1, g.cols, rb));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip(val(*b), |x, y| x * y));
                acc(*b, g.zip(val(*a), |x, y| x * y));
            }
            Op::Scale(a, k) => acc(*a, g.map(|x| x * k)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Relu(a) => acc(*a, g.zip(val(*a), |x, y| if y > 0.0 { x } else { 0.0 })),
            Op::Sigmoid(a) => acc(*a, g.zip(&node.value, |x, s| x * s * (1.0 - s))),
            Op::Exp(a) => acc(*a, g.zip(&node.value, |x, e| x * e)),
            Op::Ln(a) => acc(*a, g.zip(val(*a), |x, y| x / y)),
            Op::Softplus(a) => acc(*a, g.zip(val(*a), |x, y| x * fmath::sigmoid(y))),
            Op::Square(a) => acc(*a, g.zip(val(*a), |x, y| 2.0 * x * y)),
            Op::Clamp(a, lo, hi) => acc(
                *a,
                g.zip(val(*a), |x, y| if y >= *lo && y <= *hi { x } else { 0.0 }),
            ),
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = val(*p).cols;
                    let mut d = Vec::with_capacity(g.rows * w);
                    for r in 0..g.rows {
                        d.extend_from_slice(&g.data[r * g.cols + offset..r * g.cols + offset + w]);
                    }
                    acc(*p, Tensor::new(g.rows, w, d));
                    offset += w;
                }
            }
            Op::Col(a, j) => {
                let t = val(*a);
                let mut d = Tensor::zeros(t.rows, t.cols);
                (0..t.rows).for_each(|r| d.data[r * t.cols + j] = g.data[r]);
                acc(*a, d);
            }
            Op::Sum(a) => {
                let t = val(*a);
                acc(*a, Tensor::filled(t.rows, t.cols, g.data[0]));
            }
            Op::Mean(a) => {
                let t = val(*a);
                let n = t.data.len() as f64;
                acc(*a, Tensor::filled(t.rows, t.cols, g.data[0] / n));
            }
            Op::RepeatRows(a, m) => {
                let t = val(*a);
                let mut d = Tensor::zeros(t.rows, t.cols);
                for (r, row) in g.data.chunks(t.cols).enumerate() {
                    let dst = &mut d.data[(r / m) * t.cols..(r / m + 1) * t.cols];
                    dst.iter_mut().zip(row).for_each(|(o, x)| *o += x);
                }
                acc(*a, d);
            }
            Op::MeanGroups(a, m) => {
                let t = val(*a);
                let data = (0..t.rows).map(|r| g.data[r / m] / *m as f64).collect();
                acc(*a, Tensor::column(data));
            }
            Op::LogMeanExpGroups(a, m) => {
                let t = val(*a);
                let mut data = Vec::with_capacity(t.rows);
                for (k, grp) in t.data.chunks(*m).enumerate() {
                    let l = crate::reasoning::logsumexp_unchecked(grp);
                    data.extend(grp.iter().map(|x| g.data[k] * fmath::exp(x - l)));
                }
                acc(*a, Tensor::column(data));
            }
            Op::LogSoftmaxRows(a) => {
                let out = &node.value;
                let mut d = Vec::with_capacity(out.data.len());
                for (orow, grow) in out.data.chunks(out.cols).zip(g.data.chunks(g.cols)) {
                    let gs: f64 = grow.iter().sum();
                    d.extend(orow.iter().zip(grow).map(|(o, x)| x - fmath::exp(*o) * gs));
                }
                acc(*a, Tensor::new(out.rows, out.cols, d));
            }
        }
    }
}
