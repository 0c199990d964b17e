//! Dense tensors with row-major storage (last index fastest).
//!
//! These are the brute-force oracle representation: every structured code
//! path in this crate is checked against explicit arithmetic on
//! [`DenseTensor`] values at desk scale.

use crate::error::{Error, Result};

/// Order-`m` array of reals, stored flat in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidArgument("tensor order must be >= 1".into()));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(
                "every dimension must be >= 1".into(),
            ));
        }
        let len: usize = dims.iter().product();
        if values.len() != len {
            return Err(Error::DimensionMismatch(format!(
                "value count {} does not match dims {:?} (= {})",
                values.len(),
                dims,
                len
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Self::new(dims, vec![0.0; len]).expect("zeros")
    }

    pub fn filled(dims: Vec<usize>, value: f64) -> Self {
        let len = dims.iter().product();
        Self::new(dims, vec![value; len]).expect("filled")
    }

    pub fn ones(dims: Vec<usize>) -> Self {
        Self::filled(dims, 1.0)
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Row-major strides (last index fastest).
    pub fn strides(&self) -> Vec<usize> {
        strides_for(&self.dims)
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut flat = 0;
        for (k, &i) in idx.iter().enumerate() {
            debug_assert!(i < self.dims[k]);
            flat = flat * self.dims[k] + i;
        }
        flat
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.values[self.flat_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let flat = self.flat_index(idx);
        self.values[flat] = v;
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            dims: self.dims.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Mode-k product with a matrix `M` of shape `n_hat x dims[k]`.
    pub fn mode_product(&self, m: &Mat, k: usize) -> Result<Self> {
        if k >= self.order() {
            return Err(Error::InvalidArgument(format!(
                "mode {} out of range for order {}",
                k,
                self.order()
            )));
        }
        if m.ncols() != self.dims[k] {
            return Err(Error::DimensionMismatch(format!(
                "matrix has {} columns but mode {} has size {}",
                m.ncols(),
                k,
                self.dims[k]
            )));
        }
        let n_k = self.dims[k];
        let n_hat = m.nrows();
        let outer: usize = self.dims[..k].iter().product();
        let inner: usize = self.dims[k + 1..].iter().product();

        let mut out_dims = self.dims.clone();
        out_dims[k] = n_hat;
        let mut out = vec![0.0; outer * n_hat * inner];

        for o in 0..outer {
            for j in 0..n_hat {
                let row = m.row(j);
                let dst = (o * n_hat + j) * inner;
                for (i, &mji) in row.iter().enumerate().take(n_k) {
                    if mji == 0.0 {
                        continue;
                    }
                    let src = (o * n_k + i) * inner;
                    for t in 0..inner {
                        out[dst + t] += mji * self.values[src + t];
                    }
                }
            }
        }
        Self::new(out_dims, out)
    }

    /// Rescale mode `k` by a diagonal vector (`T ×_k diag(v)` in place).
    pub fn scale_mode(&mut self, v: &[f64], k: usize) -> Result<()> {
        if k >= self.order() {
            return Err(Error::InvalidArgument(format!("mode {} out of range", k)));
        }
        if v.len() != self.dims[k] {
            return Err(Error::DimensionMismatch(format!(
                "scaling vector length {} != mode size {}",
                v.len(),
                self.dims[k]
            )));
        }
        let n_k = self.dims[k];
        let inner: usize = self.dims[k + 1..].iter().product();
        let outer: usize = self.dims[..k].iter().product();
        for o in 0..outer {
            for (i, &vi) in v.iter().enumerate().take(n_k) {
                let base = (o * n_k + i) * inner;
                for t in 0..inner {
                    self.values[base + t] *= vi;
                }
            }
        }
        Ok(())
    }

    /// Mode-k marginal: contract with all-ones vectors on every other mode.
    pub fn marginal(&self, k: usize) -> Result<Vec<f64>> {
        if k >= self.order() {
            return Err(Error::InvalidArgument(format!(
                "mode {} out of range for order {}",
                k,
                self.order()
            )));
        }
        let n_k = self.dims[k];
        let inner: usize = self.dims[k + 1..].iter().product();
        let outer: usize = self.dims[..k].iter().product();
        let mut out = vec![0.0; n_k];
        for o in 0..outer {
            for (i, acc) in out.iter_mut().enumerate() {
                let base = (o * n_k + i) * inner;
                for t in 0..inner {
                    *acc += self.values[base + t];
                }
            }
        }
        Ok(out)
    }

    /// Marginal onto a set of modes (strictly increasing), summing out the rest.
    pub fn marginal_onto(&self, modes: &[usize]) -> Result<DenseTensor> {
        if modes.is_empty() || modes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "marginal modes must be non-empty and strictly increasing".into(),
            ));
        }
        if *modes.last().unwrap() >= self.order() {
            return Err(Error::InvalidArgument("marginal mode out of range".into()));
        }
        let out_dims: Vec<usize> = modes.iter().map(|&k| self.dims[k]).collect();
        let out_strides = strides_for(&out_dims);
        let mut out = vec![0.0; out_dims.iter().product()];
        let mut idx = vec![0usize; self.order()];
        for &v in &self.values {
            let mut flat = 0;
            for (pos, &k) in modes.iter().enumerate() {
                flat += idx[k] * out_strides[pos];
            }
            out[flat] += v;
            // odometer increment, last index fastest
            for ax in (0..self.order()).rev() {
                idx[ax] += 1;
                if idx[ax] < self.dims[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        DenseTensor::new(out_dims, out)
    }

    /// Standard inner product; dims must match exactly.
    pub fn inner(&self, other: &DenseTensor) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch(format!(
                "{:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }

    /// Shannon entropy `H(T) = -<T, log T>` with the convention `0 log 0 = 0`.
    pub fn entropy(&self) -> Result<f64> {
        let mut h = 0.0;
        for &v in &self.values {
            if v < 0.0 {
                return Err(Error::InvalidArgument(
                    "entropy requires non-negative entries".into(),
                ));
            }
            if v > 0.0 {
                h -= v * v.ln();
            }
        }
        Ok(h)
    }

    /// Outer product of vectors: entry `(i_1..i_m) = prod_k v_k[i_k]`.
    pub fn outer(vectors: &[Vec<f64>]) -> Result<DenseTensor> {
        if vectors.is_empty() {
            return Err(Error::InvalidArgument("outer product of no vectors".into()));
        }
        let dims: Vec<usize> = vectors.iter().map(|v| v.len()).collect();
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(
                "outer factors must be non-empty".into(),
            ));
        }
        let mut values = vec![1.0];
        for v in vectors {
            let mut next = Vec::with_capacity(values.len() * v.len());
            for &a in &values {
                for &b in v {
                    next.push(a * b);
                }
            }
            values = next;
        }
        DenseTensor::new(dims, values)
    }

    /// Elementwise sum of two tensors of identical shape.
    pub fn add(&self, other: &DenseTensor) -> Result<DenseTensor> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch(format!(
                "{:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(DenseTensor {
            dims: self.dims.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn scaled(&self, c: f64) -> DenseTensor {
        self.map(|v| c * v)
    }

    /// l1 norm of the entries.
    pub fn norm_l1(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    /// Max-norm of the entries.
    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub(crate) fn strides_for(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * dims[k + 1];
    }
    s
}

/// Row-major dense matrix. Order-2 tensors come up often enough (kernel
/// factors, SVD factors) that a dedicated type keeps signatures readable.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn new(nrows: usize, ncols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(Error::DimensionMismatch(format!(
                "matrix data length {} != {}x{}",
                data.len(),
                nrows,
                ncols
            )));
        }
        Ok(Self { nrows, ncols, data })
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(nrows: usize, ncols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(nrows * ncols);
        for i in 0..nrows {
            for j in 0..ncols {
                data.push(f(i, j));
            }
        }
        Self { nrows, ncols, data }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.ncols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.ncols, self.nrows, |i, j| self.get(j, i))
    }

    /// `self * v`
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.ncols {
            return Err(Error::DimensionMismatch(format!(
                "matvec: {} columns vs vector length {}",
                self.ncols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            let row = self.row(i);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(v) {
                acc += a * b;
            }
            out[i] = acc;
        }
        Ok(out)
    }

    /// `self^T * v`
    pub fn matvec_t(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.nrows {
            return Err(Error::DimensionMismatch(format!(
                "matvec_t: {} rows vs vector length {}",
                self.nrows,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.ncols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            let row = self.row(i);
            for (o, &a) in out.iter_mut().zip(row) {
                *o += vi * a;
            }
        }
        Ok(out)
    }

    /// `self * other`
    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.ncols != other.nrows {
            return Err(Error::DimensionMismatch(format!(
                "matmul: {}x{} * {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut out = Mat::zeros(self.nrows, other.ncols);
        for i in 0..self.nrows {
            for k in 0..self.ncols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.ncols {
                    out.data[i * other.ncols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    /// `self * other^T`
    pub fn matmul_t(&self, other: &Mat) -> Result<Mat> {
        if self.ncols != other.ncols {
            return Err(Error::DimensionMismatch(format!(
                "matmul_t: {}x{} * ({}x{})^T",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut out = Mat::zeros(self.nrows, other.nrows);
        for i in 0..self.nrows {
            let ri = self.row(i);
            for j in 0..other.nrows {
                let rj = other.row(j);
                let mut acc = 0.0;
                for (a, b) in ri.iter().zip(rj) {
                    acc += a * b;
                }
                out.data[i * other.nrows + j] = acc;
            }
        }
        Ok(out)
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn to_tensor(&self) -> DenseTensor {
        DenseTensor::new(vec![self.nrows, self.ncols], self.data.clone()).expect("mat to tensor")
    }

    pub fn from_tensor(t: &DenseTensor) -> Result<Mat> {
        if t.order() != 2 {
            return Err(Error::InvalidArgument(format!(
                "expected order-2 tensor, got order {}",
                t.order()
            )));
        }
        Mat::new(t.dims()[0], t.dims()[1], t.values().to_vec())
    }
}
