//! Dense row-major `f64` tensors of rank 1–3.
//!
//! Values are immutable after construction and cheap to clone (the buffer is
//! shared behind an `Arc`), which is what lets the tape hand them around
//! freely. `requires_grad` marks trainable leaves; it is consulted when a
//! tensor is bound to a [`crate::tape::Tape`].

use std::sync::Arc;

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 3;

#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
}

impl PartialEq for Tensor {
    /// Value equality: shape and data. `requires_grad` is training metadata.
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > MAX_RANK {
            return Err(Error::Config(format!(
                "tensor rank must be 1..={MAX_RANK}, got shape {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::DataLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
            requires_grad: false,
        })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor::new(vec![n], data).expect("vector shape always matches")
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new(vec![1], vec![value]).expect("scalar shape always matches")
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![0.0; n]).expect("zeros shape always matches")
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![value; n]).expect("full shape always matches")
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(m * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::ShapeMismatch {
                    op: "from_rows",
                    lhs: vec![m, n],
                    rhs: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::matrix(m, n, data)
    }

    /// Marks this tensor as a trainable leaf.
    pub fn requiring_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    /// Row count, valid for rank-2 tensors.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.rank(), 2, "rows() on non-matrix");
        self.shape[0]
    }

    /// Column count, valid for rank-2 tensors.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.rank(), 2, "cols() on non-matrix");
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.cols();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Columns `[start, end)` of a matrix, as a new matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        let (m, n) = (self.rows(), self.cols());
        if start > end || end > n {
            return Err(Error::InvalidAxis {
                op: "slice_cols",
                axis: end,
                rank: n,
            });
        }
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&self.data[i * n + start..i * n + end]);
        }
        Tensor::matrix(m, w, out)
    }

    /// Row-wise softmax computed with max-subtraction, as a plain value.
    /// Shared by the tape op and by loss-weight construction on detached
    /// teacher logits.
    pub fn softmax_rows_value(&self) -> Tensor {
        debug_assert_eq!(self.rank(), 2, "softmax_rows_value on non-matrix");
        let (m, n) = (self.rows(), self.cols());
        let mut out = vec![0.0; m * n];
        softmax_rows_into(&self.data, &mut out, m, n);
        Tensor::matrix(m, n, out).expect("softmax preserves shape")
    }
}

pub(crate) fn softmax_rows_into(x: &[f64], out: &mut [f64], m: usize, n: usize) {
    for i in 0..m {
        let row = &x[i * n..(i + 1) * n];
        let orow = &mut out[i * n..(i + 1) * n];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for j in 0..n {
            let e = (row[j] - max).exp();
            orow[j] = e;
            sum += e;
        }
        let inv = 1.0 / sum;
        for v in orow.iter_mut() {
            *v *= inv;
        }
    }
}

// ── Matrix kernels ────────────────────────────────────────────────────
//
// Plain loops ordered for contiguous streaming; everything at desk scale
// fits in cache.

/// `a[m×k] · b[k×n]`
pub(crate) fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

/// `a[m×k] · b[n×k]ᵀ`
pub(crate) fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cv) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for p in 0..k {
                acc += arow[p] * brow[p];
            }
            *cv = acc;
        }
    }
    c
}

/// `a[k×m]ᵀ · b[k×n]`
pub(crate) fn mm_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..k {
        let arow = &a[i * m..(i + 1) * m];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

pub(crate) fn add_slices(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}
