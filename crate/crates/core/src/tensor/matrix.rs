use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Wraps `data` after checking its length and that every entry is finite.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix data"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f32]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::Shape("ragged rows".into()));
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f32) {
        self.data[i * self.cols + j] = value;
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// Copies `cols` columns starting at `start` into a new matrix.
    pub fn columns(&self, start: usize, cols: usize) -> Self {
        let mut out = Self::zeros(self.rows, cols);
        for i in 0..self.rows {
            out.row_mut(i).copy_from_slice(&self.row(i)[start..start + cols]);
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f32, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// `f64`-accumulated dot product. Four interleaved partial sums, combined
/// as `(s0 + s1) + (s2 + s3)`, then the tail left to right.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut s = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            s[l] += f64::from(x[l]) * f64::from(y[l]);
        }
    }
    let mut acc = (s[0] + s[1]) + (s[2] + s[3]);
    for (x, y) in ta.iter().zip(tb) {
        acc += f64::from(*x) * f64::from(*y);
    }
    acc
}

/// Standard product `a · b`, accumulating sequentially over the inner index.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "matmul {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for j in 0..b.cols {
            let mut acc = 0.0f64;
            for k in 0..a.cols {
                acc += f64::from(a.data[i * a.cols + k]) * f64::from(b.data[k * b.cols + j]);
            }
            out.data[i * b.cols + j] = acc as f32;
        }
    }
    Ok(out)
}

/// Max-subtracted softmax over `scores`, in place. Entries that are
/// `f64::NEG_INFINITY` are treated as masked and come out as exactly zero.
///
/// Returns `false` when every entry is masked.
pub fn softmax_in_place(scores: &mut [f64]) -> bool {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return false;
    }
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = if *s == f64::NEG_INFINITY {
            0.0
        } else {
            libm::exp(*s - max)
        };
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
    true
}

/// Row-wise softmax of `scale · m`. With `causal_mask`, entry `(i, j)` with
/// `j > i` is masked to zero.
pub fn softmax_rows(m: &Matrix, scale: f32, causal_mask: bool) -> Result<Matrix> {
    if scale.is_nan() || scale <= 0.0 || !scale.is_finite() {
        return Err(Error::InvalidParameter(format!("softmax scale {scale}")));
    }
    if m.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax input"));
    }
    let mut out = Matrix::zeros(m.rows, m.cols);
    let mut buf = vec![0.0f64; m.cols];
    for i in 0..m.rows {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = if causal_mask && j > i {
                f64::NEG_INFINITY
            } else {
                f64::from(m.get(i, j)) * f64::from(scale)
            };
        }
        if !softmax_in_place(&mut buf) {
            return Err(Error::FullyMaskedRow(i));
        }
        for (o, b) in out.row_mut(i).iter_mut().zip(&buf) {
            *o = *b as f32;
        }
    }
    Ok(out)
}
