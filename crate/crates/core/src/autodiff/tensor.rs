use serde::{Deserialize, Serialize};

use super::AutodiffError;

/// Dense row-major array of `f64`.
///
/// A rank-0 tensor (empty shape) holds a single scalar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Splits `shape` around `axis` into (outer, dim, inner) extents.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, AutodiffError> {
        if numel(&shape) != data.len() {
            return Err(AutodiffError::Shape {
                op: "tensor",
                detail: format!("shape {:?} needs {} values, got {}", shape, numel(&shape), data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor whose length is already known to match; panics otherwise.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; numel(shape)] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AutodiffError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn eye(n: usize) -> Self {
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

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self, AutodiffError> {
        if numel(&shape) != self.data.len() {
            return Err(AutodiffError::Shape {
                op: "reshape",
                detail: format!("cannot view {:?} as {:?}", self.shape, shape),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute elementwise difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0;
        for (i, (&x, &d)) in idx.iter().zip(&self.shape).enumerate() {
            assert!(x < d, "index {x} out of bounds for axis {i} of extent {d}");
            flat = flat * d + x;
        }
        flat
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        self.data[self.flat_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let i = self.flat_index(idx);
        self.data[i] = value;
    }

    /// 2-D transpose.
    pub fn transposed(&self) -> Self {
        assert_eq!(self.rank(), 2, "transposed() needs a matrix");
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self { shape: vec![c, r], data: out }
    }

    /// Gathers along axis 0: `out[k] = self[perm[k]]`.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        let (_, n, inner) = axis_split(&self.shape, 0);
        assert_eq!(perm.len(), n);
        let mut out = Vec::with_capacity(self.data.len());
        for &p in perm {
            out.extend_from_slice(&self.data[p * inner..(p + 1) * inner]);
        }
        Self { shape: self.shape.clone(), data: out }
    }

    /// Gathers along axes 0 and 1 simultaneously (for n×n×… pair tensors).
    pub fn permute_pairs(&self, perm: &[usize]) -> Self {
        assert!(self.rank() >= 2 && self.shape[0] == self.shape[1]);
        let n = self.shape[0];
        assert_eq!(perm.len(), n);
        let inner: usize = self.shape[2..].iter().product();
        let mut out = Vec::with_capacity(self.data.len());
        for &a in perm {
            for &b in perm {
                let base = (a * n + b) * inner;
                out.extend_from_slice(&self.data[base..base + inner]);
            }
        }
        Self { shape: self.shape.clone(), data: out }
    }
}
