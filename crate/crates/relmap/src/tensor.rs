//! Dense row-major tensors and the elementwise / linear-algebra kernels the
//! rest of the toolkit builds on.
//!
//! Tensors are immutable once constructed. All kernels are pure functions
//! with a fixed left-to-right, row-major accumulation order, so results are
//! bit-reproducible across runs and thread counts.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense N-dimensional array in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBase<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

/// Pairwise elementwise operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Max,
}

impl<S: Scalar> TensorBase<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::InvalidInput("tensor rank must be >= 1".into()));
        }
        if shape.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "all dimension sizes must be >= 1, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} expects {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self::new(shape, vec![S::zero(); n]).expect("zeros: invalid shape")
    }

    pub fn filled(shape: Vec<usize>, value: S) -> Self {
        let n: usize = shape.iter().product();
        Self::new(shape, vec![value; n]).expect("filled: invalid shape")
    }

    pub fn from_vec(data: Vec<S>) -> Self {
        let n = data.len();
        Self::new(vec![n], data).expect("from_vec: empty input")
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

    pub fn data(&self) -> &[S] {
        &self.data
    }

    /// Consumes the tensor, returning the flat data buffer.
    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Row-major flat offset of a multi-index.
    pub fn flat_offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "index rank {} != tensor rank {}",
                index.len(),
                self.shape.len()
            )));
        }
        let mut offset = 0usize;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            if ix >= dim {
                return Err(Error::InvalidInput(format!(
                    "index {ix} out of bounds for axis {i} (size {dim})"
                )));
            }
            offset = offset * dim + ix;
        }
        Ok(offset)
    }

    /// Inverse of [`flat_offset`](Self::flat_offset).
    pub fn multi_index(&self, mut offset: usize) -> Vec<usize> {
        let mut index = vec![0usize; self.shape.len()];
        for (i, &dim) in self.shape.iter().enumerate().rev() {
            index[i] = offset % dim;
            offset /= dim;
        }
        index
    }

    pub fn get(&self, index: &[usize]) -> Result<S> {
        Ok(self.data[self.flat_offset(index)?])
    }

    /// Returns a tensor with the same data reinterpreted under a new shape.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }
}

pub fn elementwise<S: Scalar>(
    op: ElementwiseOp,
    a: &TensorBase<S>,
    b: &TensorBase<S>,
) -> Result<TensorBase<S>> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "elementwise operands differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| match op {
            ElementwiseOp::Add => x + y,
            ElementwiseOp::Sub => x - y,
            ElementwiseOp::Mul => x * y,
            ElementwiseOp::Max => x.max(y),
        })
        .collect();
    TensorBase::new(a.shape().to_vec(), data)
}

/// Dense matrix-vector product: `result[k] = sum_j w[k,j] * a[j]`.
///
/// Accumulates in `f64`, rounding once per output element.
pub fn matvec<S: Scalar>(w: &TensorBase<S>, a: &TensorBase<S>) -> Result<TensorBase<S>> {
    if w.rank() != 2 || a.rank() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "matvec expects rank-2 x rank-1, got rank {} x rank {}",
            w.rank(),
            a.rank()
        )));
    }
    let (m, n) = (w.shape()[0], w.shape()[1]);
    if n != a.len() {
        return Err(Error::ShapeMismatch(format!(
            "matvec: matrix has {n} columns but vector has {} elements",
            a.len()
        )));
    }
    let wd = w.data();
    let ad = a.data();
    let mut out = Vec::with_capacity(m);
    for k in 0..m {
        let mut acc = 0.0f64;
        for j in 0..n {
            acc += wd[k * n + j].to_f64() * ad[j].to_f64();
        }
        out.push(S::from_f64(acc));
    }
    TensorBase::new(vec![m], out)
}

/// Left-to-right sum over all elements, accumulated in `f64`.
pub fn reduce_sum<S: Scalar>(t: &TensorBase<S>) -> S {
    let mut acc = 0.0f64;
    for &x in t.data() {
        acc += x.to_f64();
    }
    S::from_f64(acc)
}

pub fn reduce_max<S: Scalar>(t: &TensorBase<S>) -> S {
    let mut best = t.data()[0];
    for &x in &t.data()[1..] {
        if x > best {
            best = x;
        }
    }
    best
}

/// Index of the maximum element; ties break toward the lowest flat index.
pub fn reduce_argmax<S: Scalar>(t: &TensorBase<S>) -> usize {
    let mut best = t.data()[0];
    let mut arg = 0usize;
    for (i, &x) in t.data().iter().enumerate().skip(1) {
        if x > best {
            best = x;
            arg = i;
        }
    }
    arg
}
