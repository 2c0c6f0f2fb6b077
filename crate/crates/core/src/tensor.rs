//! Dense row-major tensors.
//!
//! Feature maps travel as channel-first `[D, H, W]` tensors. Inside the
//! networks they are flattened to "row" layout `[positions, D]` so that every
//! per-position layer is a matrix product over the trailing axis.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Real, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim("Tensor::new", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    /// One-dimensional tensor from a vector.
    pub fn from_vec(data: Vec<T>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Matrix from nested rows; all rows must share a length.
    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::dim("Tensor::from_rows", &[cols], &[r.len()]));
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the trailing axis (1 for scalars).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Product of all leading axes.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            n => self.shape[..n - 1].iter().product(),
        }
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    /// Value of a scalar (or the first element).
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `[D, H, W]` to `[H*W, D]`.
    pub fn chw_to_rows(&self) -> Result<Self> {
        let (d, h, w) = self.chw()?;
        let p = h * w;
        let mut out = vec![T::zero(); d * p];
        for c in 0..d {
            for (i, v) in self.data[c * p..(c + 1) * p].iter().enumerate() {
                out[i * d + c] = *v;
            }
        }
        Tensor::new(vec![p, d], out)
    }

    /// `[H*W, D]` back to `[D, H, W]`.
    pub fn rows_to_chw(&self, h: usize, w: usize) -> Result<Self> {
        if self.shape.len() != 2 || self.shape[0] != h * w {
            return Err(Error::dim("rows_to_chw", &self.shape, &[h * w]));
        }
        let d = self.shape[1];
        let p = h * w;
        let mut out = vec![T::zero(); d * p];
        for i in 0..p {
            for c in 0..d {
                out[c * p + i] = self.data[i * d + c];
            }
        }
        Tensor::new(vec![d, h, w], out)
    }

    /// `(D, H, W)` of a channel-first feature map.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [d, h, w] => Ok((d, h, w)),
            _ => Err(Error::Contract(alloc::format!(
                "expected a [D, H, W] tensor, got shape {:?}",
                self.shape
            ))),
        }
    }
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum<T: Real>(xs: &[T]) -> T {
    const LEAF: usize = 16;
    if xs.len() <= LEAF {
        let mut acc = T::zero();
        for &x in xs {
            acc += x;
        }
        acc
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Column sums of a row-major `[rows, cols]` block, pairwise over rows.
pub(crate) fn pairwise_col_sums<T: Real>(data: &[T], cols: usize) -> Vec<T> {
    const LEAF: usize = 16;
    let rows = if cols == 0 { 0 } else { data.len() / cols };
    if rows <= LEAF {
        let mut acc = vec![T::zero(); cols];
        for r in 0..rows {
            for (a, &v) in acc.iter_mut().zip(&data[r * cols..(r + 1) * cols]) {
                *a += v;
            }
        }
        acc
    } else {
        let mid = rows / 2;
        let mut lo = pairwise_col_sums(&data[..mid * cols], cols);
        let hi = pairwise_col_sums(&data[mid * cols..], cols);
        for (a, b) in lo.iter_mut().zip(hi) {
            *a += b;
        }
        lo
    }
}

/// Channel means of a `[D, H, W]` feature map.
pub fn avg_pool_spatial<T: Real>(h: &Tensor<T>) -> Result<Tensor<T>> {
    let (d, hh, ww) = h.chw()?;
    let p = hh * ww;
    if p == 0 {
        return Err(Error::dim("avg_pool_spatial", h.shape(), &[1, 1]));
    }
    let n = T::lit(p as f64);
    let out = (0..d)
        .map(|c| pairwise_sum(&h.data()[c * p..(c + 1) * p]) / n)
        .collect();
    Ok(Tensor::from_vec(out))
}

/// Squared Euclidean distance, summed left to right.
#[inline]
pub fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}
