use alloc::format;
use alloc::vec::Vec;

use super::Matrix;
use crate::{Error, Result};

/// Conventional rotary base.
pub const DEFAULT_THETA_BASE: f64 = 10_000.0;

/// Inverse frequencies for rotating vectors of one fixed even dimension.
///
/// Pairs are adjacent entries `(x[2i], x[2i+1])`, rotated by
/// `position · theta_base^(-2i/dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RopeTable {
    dim: usize,
    inv_freq: Vec<f64>,
}

impl RopeTable {
    pub fn new(dim: usize, theta_base: f64) -> Result<Self> {
        if !dim.is_multiple_of(2) {
            return Err(Error::Shape(format!("rotary dimension {dim} is odd")));
        }
        let inv_freq = (0..dim / 2)
            .map(|i| libm::pow(theta_base, -((2 * i) as f64) / dim as f64))
            .collect();
        Ok(Self { dim, inv_freq })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Rotates one `dim`-long vector in place.
    pub fn rotate(&self, x: &mut [f32], position: usize) {
        debug_assert_eq!(x.len(), self.dim);
        if position == 0 {
            return;
        }
        for (pair, freq) in x.chunks_exact_mut(2).zip(&self.inv_freq) {
            let (sin, cos) = libm::sincos(position as f64 * freq);
            let a = f64::from(pair[0]);
            let b = f64::from(pair[1]);
            pair[0] = (a * cos - b * sin) as f32;
            pair[1] = (a * sin + b * cos) as f32;
        }
    }

    /// Rotates every `dim`-long chunk of `x` (one chunk per head).
    pub fn rotate_heads(&self, x: &mut [f32], position: usize) {
        for head in x.chunks_exact_mut(self.dim) {
            self.rotate(head, position);
        }
    }
}

/// Applies RoPE to each row of `x`, row `t` at `positions[t]`.
pub fn apply_rope(x: &Matrix, positions: &[usize], theta_base: f64) -> Result<Matrix> {
    if positions.len() != x.rows() {
        return Err(Error::Shape(format!(
            "{} positions for {} rows",
            positions.len(),
            x.rows()
        )));
    }
    let table = RopeTable::new(x.cols(), theta_base)?;
    let mut out = x.clone();
    for (t, &p) in positions.iter().enumerate() {
        table.rotate(out.row_mut(t), p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn position_zero_is_identity() {
        let mut rng = Rng::new(1);
        let x = rng.normal_matrix(3, 8, 1.0);
        assert_eq!(apply_rope(&x, &[0, 0, 0], DEFAULT_THETA_BASE).unwrap(), x);
    }

    #[test]
    fn preserves_pair_norms() {
        let mut rng = Rng::new(2);
        let x = rng.normal_matrix(5, 16, 3.0);
        let y = apply_rope(&x, &[1, 7, 100, 4095, 70_000], DEFAULT_THETA_BASE).unwrap();
        for t in 0..5 {
            for (a, b) in x.row(t).chunks(2).zip(y.row(t).chunks(2)) {
                let na = (a[0] * a[0] + a[1] * a[1]).sqrt();
                let nb = (b[0] * b[0] + b[1] * b[1]).sqrt();
                assert!((na - nb).abs() < 1e-5, "{na} vs {nb}");
            }
        }
    }

    #[test]
    fn two_dims_rotate_by_one_radian() {
        let x = Matrix::from_rows(&[&[0.6, -0.8]]).unwrap();
        let y = apply_rope(&x, &[1], DEFAULT_THETA_BASE).unwrap();
        let (c, s) = (1.0f64.cos(), 1.0f64.sin());
        let expect = [0.6 * c + 0.8 * s, 0.6 * s - 0.8 * c];
        for (v, e) in y.data().iter().zip(expect) {
            assert!((f64::from(*v) - e).abs() < 1e-6);
        }
    }

    #[test]
    fn odd_dimension_rejected() {
        let x = Matrix::zeros(1, 3);
        assert!(matches!(apply_rope(&x, &[0], DEFAULT_THETA_BASE), Err(Error::Shape(_))));
    }
}
