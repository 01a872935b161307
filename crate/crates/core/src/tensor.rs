//! Dense n-way arrays and matrices in row-major `f64` storage.
//!
//! Mode-n unfolding convention: for a tensor of shape `(I_0, .., I_{N-1})`,
//! `unfold(x, n)` has `I_n` rows and the columns enumerate the remaining
//! modes in their original order with the last mode varying fastest. Viewing
//! the tensor as `(A, I_n, B)` with `A = I_0 .. I_{n-1}` and
//! `B = I_{n+1} .. I_{N-1}`, entry `(a, i, b)` lands at row `i`, column
//! `a * B + b`. `fold` is the exact inverse.

use std::fmt;

use crate::error::{ensure, LoridError, Result};

/// Dense real tensor with row-major layout.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

fn checked_volume(shape: &[usize]) -> Result<usize> {
    ensure!(!shape.is_empty(), Shape, "tensor must have at least one mode");
    shape.iter().try_fold(1usize, |acc, &d| {
        ensure!(d >= 1, Shape, "dimension sizes must be >= 1, got {shape:?}");
        acc.checked_mul(d)
            .ok_or_else(|| LoridError::Shape(format!("volume of {shape:?} overflows")))
    })
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let volume = checked_volume(&shape)?;
        ensure!(
            data.len() == volume,
            Shape,
            "data length {} does not match shape {:?} (volume {})",
            data.len(),
            shape,
            volume
        );
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let volume = checked_volume(shape).expect("valid shape");
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; volume],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    /// One-mode tensor holding `values`.
    pub fn vector(values: Vec<f64>) -> Self {
        let n = values.len().max(1);
        let data = if values.is_empty() { vec![0.0] } else { values };
        Self {
            shape: vec![n],
            data,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        let mut idx = vec![0usize; shape.len()];
        for v in t.data.iter_mut() {
            *v = f(&idx);
            for k in (0..shape.len()).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
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

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                debug_assert!(i < d);
                acc * d + i
            })
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let o = self.offset(idx);
        self.data[o] = value;
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_same_shape(other)?;
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

    pub fn expect_same_shape(&self, other: &Self) -> Result<()> {
        ensure!(
            self.shape == other.shape,
            Shape,
            "{:?} vs {:?}",
            self.shape,
            other.shape
        );
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// `self * a + other * b`, entrywise.
    pub fn axpby(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.zip_map(other, |x, y| a * x + b * y)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Self {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.squared_norm().sqrt()
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sub-tensor at position `i` of the leading mode.
    pub fn slice_first(&self, i: usize) -> Result<Self> {
        ensure!(self.order() >= 2, Shape, "slice_first needs order >= 2");
        ensure!(
            i < self.shape[0],
            OutOfRange,
            "slice {i} of leading mode {}",
            self.shape[0]
        );
        let inner = self.data.len() / self.shape[0];
        Ok(Self {
            shape: self.shape[1..].to_vec(),
            data: self.data[i * inner..(i + 1) * inner].to_vec(),
        })
    }

    /// Stack equally shaped tensors along a new leading mode.
    pub fn stack(items: &[Self]) -> Result<Self> {
        ensure!(!items.is_empty(), InvalidArgument, "cannot stack zero tensors");
        let shape0 = items[0].shape.clone();
        let mut data = Vec::with_capacity(items.len() * items[0].len());
        for t in items {
            ensure!(t.shape == shape0, Shape, "{:?} vs {:?}", t.shape, shape0);
            data.extend_from_slice(&t.data);
        }
        let mut shape = Vec::with_capacity(shape0.len() + 1);
        shape.push(items.len());
        shape.extend(shape0);
        Self::new(shape, data)
    }

    /// Iterate over the leading-mode slices.
    pub fn unstack(&self) -> Result<Vec<Self>> {
        (0..self.shape[0]).map(|i| self.slice_first(i)).collect()
    }
}

/// Real matrix in row-major order.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{}", self.rows, self.cols)?;
        if self.rows * self.cols <= 64 {
            for r in 0..self.rows {
                writeln!(f, "  {:?}", self.row(r))?;
            }
        }
        Ok(())
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(rows >= 1 && cols >= 1, Shape, "matrix dims must be >= 1");
        ensure!(
            data.len() == rows * cols,
            Shape,
            "data length {} != {rows}x{cols}",
            data.len()
        );
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(cols: &[Vec<f64>]) -> Result<Self> {
        ensure!(!cols.is_empty(), Shape, "no columns");
        let rows = cols[0].len();
        ensure!(cols.iter().all(|c| c.len() == rows), Shape, "ragged columns");
        Ok(Self::from_fn(rows, cols.len(), |r, c| cols[c][r]))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
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

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        ensure!(
            self.cols == other.rows,
            Shape,
            "matmul {}x{} by {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        ensure!(v.len() == self.cols, Shape, "matvec {} vs {}", self.cols, v.len());
        Ok((0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// First `k` columns.
    pub fn leading_columns(&self, k: usize) -> Self {
        assert!(k >= 1 && k <= self.cols);
        Self::from_fn(self.rows, k, |r, c| self.get(r, c))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        ensure!(
            self.rows == other.rows && self.cols == other.cols,
            Shape,
            "{}x{} vs {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn split_volumes(shape: &[usize], mode: usize) -> (usize, usize, usize) {
    let before: usize = shape[..mode].iter().product();
    let after: usize = shape[mode + 1..].iter().product();
    (before, shape[mode], after)
}

/// Mode-`mode` matricization of `x`.
pub fn unfold(x: &Tensor, mode: usize) -> Result<Matrix> {
    ensure!(
        mode < x.order(),
        OutOfRange,
        "mode {mode} for tensor of order {}",
        x.order()
    );
    let (before, dim, after) = split_volumes(x.shape(), mode);
    let cols = before * after;
    let mut out = vec![0.0; dim * cols];
    let src = x.data();
    for a in 0..before {
        for i in 0..dim {
            let s = &src[(a * dim + i) * after..(a * dim + i + 1) * after];
            out[i * cols + a * after..i * cols + (a + 1) * after].copy_from_slice(s);
        }
    }
    Matrix::new(dim, cols, out)
}

/// Inverse of [`unfold`].
pub fn fold(m: &Matrix, mode: usize, shape: &[usize]) -> Result<Tensor> {
    checked_volume(shape)?;
    ensure!(
        mode < shape.len(),
        OutOfRange,
        "mode {mode} for shape {shape:?}"
    );
    let (before, dim, after) = split_volumes(shape, mode);
    ensure!(
        m.rows() == dim && m.cols() == before * after,
        Shape,
        "cannot fold {}x{} into {shape:?} along mode {mode}",
        m.rows(),
        m.cols()
    );
    let cols = m.cols();
    let mut out = vec![0.0; dim * cols];
    for a in 0..before {
        for i in 0..dim {
            let s = &m.data()[i * cols + a * after..i * cols + (a + 1) * after];
            out[(a * dim + i) * after..(a * dim + i + 1) * after].copy_from_slice(s);
        }
    }
    Tensor::new(shape.to_vec(), out)
}

/// `x ×_mode u`: contracts mode `mode` of `x` with the columns of `u`.
pub fn mode_product(x: &Tensor, u: &Matrix, mode: usize) -> Result<Tensor> {
    ensure!(
        mode < x.order(),
        OutOfRange,
        "mode {mode} for tensor of order {}",
        x.order()
    );
    let (before, dim, after) = split_volumes(x.shape(), mode);
    ensure!(
        u.cols() == dim,
        Shape,
        "mode product: factor is {}x{} but mode {mode} has size {dim}",
        u.rows(),
        u.cols()
    );
    let new_dim = u.rows();
    let mut out = vec![0.0; before * new_dim * after];
    let src = x.data();
    for a in 0..before {
        for r in 0..new_dim {
            let dst = &mut out[(a * new_dim + r) * after..(a * new_dim + r + 1) * after];
            for i in 0..dim {
                let w = u.get(r, i);
                if w == 0.0 {
                    continue;
                }
                let s = &src[(a * dim + i) * after..(a * dim + i + 1) * after];
                for (d, &v) in dst.iter_mut().zip(s) {
                    *d += w * v;
                }
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[mode] = new_dim;
    Tensor::new(shape, out)
}

pub fn frobenius_norm(x: &Tensor) -> f64 {
    x.frobenius_norm()
}

/// Euclidean norm of a flat slice.
pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Mean of squared entrywise differences.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.expect_same_shape(b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(s / a.len() as f64)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
