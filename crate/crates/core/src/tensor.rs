//! Dense row-major tensors of `f64` with the handful of linear-algebra and
//! elementwise operations the rest of the crate is built on.
//!
//! There is deliberately no broadcasting: binary operations require equal
//! shapes (scalars go through [`Tensor::scale`] / [`Tensor::add_scalar`]),
//! so shape bugs surface at the call site instead of three layers later.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} elements, got {got}")]
    ShapeDataMismatch {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op} expects rank-{expected} operand, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("reduction axis {axis} out of range or repeated for shape {shape:?}")]
    BadAxis { axis: usize, shape: Vec<usize> },
    #[error("reduction over empty axis {axis} of shape {shape:?}")]
    EmptyReduction { axis: usize, shape: Vec<usize> },
    #[error("log of non-positive element {value} at flat index {index}")]
    LogDomain { value: f64, index: usize },
    #[error("normal draw with negative std {std}")]
    NegativeStd { std: f64 },
}

/// `row += s * other`, unrolled four wide. The accumulation order is fixed,
/// so results are reproducible.
#[inline]
pub(crate) fn axpy(row: &mut [f64], s: f64, other: &[f64]) {
    let chunks = row.len() / 4;
    let (r4, rt) = row.split_at_mut(chunks * 4);
    let (o4, ot) = other.split_at(chunks * 4);
    for (r, o) in r4.chunks_exact_mut(4).zip(o4.chunks_exact(4)) {
        r[0] += s * o[0];
        r[1] += s * o[1];
        r[2] += s * o[2];
        r[3] += s * o[3];
    }
    for (r, &o) in rt.iter_mut().zip(ot) {
        *r += s * o;
    }
}

/// Four-lane dot product with a fixed lane-combination order.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let chunks = a.len() / 4;
    let (a4, at) = a.split_at(chunks * 4);
    let (b4, bt) = b.split_at(chunks * 4);
    let mut acc = [0.0f64; 4];
    for (x, y) in a4.chunks_exact(4).zip(b4.chunks_exact(4)) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (&x, &y) in at.iter().zip(bt) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Dense n-dimensional array of `f64`, row-major.
///
/// Invariant: `shape.iter().product() == data.len()`. A rank-0 tensor
/// (empty shape) is a scalar holding exactly one element.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Reduction kinds accepted by [`Tensor::reduce`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    Max,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                expected,
                got: data.len(),
                shape,
            });
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

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    /// 1-D tensor from a flat vector.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// 2-D tensor from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    lhs: vec![rows.len(), cols],
                    rhs: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a scalar (or single-element) tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar {:?}", self.shape);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data, new shape; element count must match.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(TensorError::ShapeDataMismatch {
                expected,
                got: self.data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    fn require_same_shape(&self, other: &Self, op: &'static str) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, other: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self, TensorError> {
        self.require_same_shape(other, op)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self, TensorError> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, TensorError> {
        self.zip(other, "sub", |a, b| a - b)
    }

    /// Hadamard (elementwise) product.
    pub fn mul(&self, other: &Self) -> Result<Self, TensorError> {
        self.zip(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_scalar(&self, s: f64) -> Self {
        self.map(|v| v + s)
    }

    pub fn tanh(&self) -> Self {
        self.map(f64::tanh)
    }

    pub fn relu(&self) -> Self {
        self.map(|v| v.max(0.0))
    }

    pub fn exp(&self) -> Self {
        self.map(f64::exp)
    }

    pub fn ln(&self) -> Result<Self, TensorError> {
        if let Some((index, &value)) = self.data.iter().enumerate().find(|(_, v)| **v <= 0.0) {
            return Err(TensorError::LogDomain { value, index });
        }
        Ok(self.map(f64::ln))
    }

    /// Matrix product of two rank-2 tensors `[m,k] x [k,n] -> [m,n]`.
    ///
    /// Accumulation runs in a fixed i-k-j order, so results are bitwise
    /// reproducible; rows are independent, which keeps the optional
    /// data-parallel path identical to the serial one.
    pub fn matmul(&self, other: &Self) -> Result<Self, TensorError> {
        if self.rank() != 2 {
            return Err(TensorError::RankMismatch {
                op: "matmul",
                expected: 2,
                shape: self.shape.clone(),
            });
        }
        if other.rank() != 2 {
            return Err(TensorError::RankMismatch {
                op: "matmul",
                expected: 2,
                shape: other.shape.clone(),
            });
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        let row_job = |i: usize, out_row: &mut [f64]| {
            for kk in 0..k {
                let a = self.data[i * k + kk];
                if a == 0.0 {
                    continue;
                }
                axpy(out_row, a, &other.data[kk * n..(kk + 1) * n]);
            }
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            if m * n * k >= 1 << 16 {
                out.par_chunks_mut(n).enumerate().for_each(|(i, row)| row_job(i, row));
            } else {
                for (i, row) in out.chunks_mut(n).enumerate() {
                    row_job(i, row);
                }
            }
        }
        #[cfg(not(feature = "parallel"))]
        for (i, row) in out.chunks_mut(n).enumerate() {
            row_job(i, row);
        }
        Tensor::new(vec![m, n], out)
    }

    /// Matrix-vector product `[m,n] x [n] -> [m]`.
    pub fn matvec(&self, x: &Self) -> Result<Self, TensorError> {
        if self.rank() != 2 {
            return Err(TensorError::RankMismatch {
                op: "matvec",
                expected: 2,
                shape: self.shape.clone(),
            });
        }
        if x.rank() != 1 || self.shape[1] != x.shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matvec",
                lhs: self.shape.clone(),
                rhs: x.shape.clone(),
            });
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m];
        for i in 0..m {
            out[i] = dot(&self.data[i * n..(i + 1) * n], &x.data);
        }
        Tensor::new(vec![m], out)
    }

    /// Reduce over the given axes (deduplicated, all in range).
    pub fn reduce(&self, kind: Reduction, axes: &[usize]) -> Result<Self, TensorError> {
        let rank = self.rank();
        let mut reduce_axis = vec![false; rank];
        for &axis in axes {
            if axis >= rank || reduce_axis[axis] {
                return Err(TensorError::BadAxis {
                    axis,
                    shape: self.shape.clone(),
                });
            }
            if self.shape[axis] == 0 {
                return Err(TensorError::EmptyReduction {
                    axis,
                    shape: self.shape.clone(),
                });
            }
            reduce_axis[axis] = true;
        }
        let out_shape: Vec<usize> = self
            .shape
            .iter()
            .enumerate()
            .filter(|(i, _)| !reduce_axis[*i])
            .map(|(_, &e)| e)
            .collect();
        let out_len: usize = out_shape.iter().product();
        let count: usize = self
            .shape
            .iter()
            .enumerate()
            .filter(|(i, _)| reduce_axis[*i])
            .map(|(_, &e)| e)
            .product();

        let init = match kind {
            Reduction::Max => f64::NEG_INFINITY,
            _ => 0.0,
        };
        let mut out = vec![init; out_len];

        // Strides of the output within the input's index space.
        let mut out_strides = vec![0usize; rank];
        let mut s = 1;
        for i in (0..rank).rev() {
            if !reduce_axis[i] {
                out_strides[i] = s;
                s *= self.shape[i];
            }
        }
        let mut idx = vec![0usize; rank];
        for &v in &self.data {
            let mut o = 0;
            for i in 0..rank {
                o += idx[i] * out_strides[i];
            }
            match kind {
                Reduction::Sum | Reduction::Mean => out[o] += v,
                Reduction::Max => {
                    if v > out[o] {
                        out[o] = v
                    }
                }
            }
            for i in (0..rank).rev() {
                idx[i] += 1;
                if idx[i] < self.shape[i] {
                    break;
                }
                idx[i] = 0;
            }
        }
        if kind == Reduction::Mean {
            let inv = 1.0 / count as f64;
            for o in &mut out {
                *o *= inv;
            }
        }
        Tensor::new(out_shape, out)
    }

    /// Sum of all elements.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Mean of all elements.
    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Euclidean norm of the flattened data.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
