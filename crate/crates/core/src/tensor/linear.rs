use alloc::format;
use alloc::vec::Vec;

use super::{dot, quantize, BitWidth, Matrix, QuantizedMatrix};
use crate::{Error, Result};

/// A projection weight `W` of shape `out × in`, applied as `y = W x`.
#[derive(Debug, Clone, PartialEq)]
pub enum Linear {
    Dense(Matrix),
    Quantized(QuantizedMatrix),
}

impl Linear {
    pub fn out_features(&self) -> usize {
        match self {
            Linear::Dense(m) => m.rows(),
            Linear::Quantized(q) => q.rows(),
        }
    }

    pub fn in_features(&self) -> usize {
        match self {
            Linear::Dense(m) => m.cols(),
            Linear::Quantized(q) => q.cols(),
        }
    }

    /// Number of weight entries, which is also the MAC count of one `apply`.
    pub fn numel(&self) -> usize {
        self.out_features() * self.in_features()
    }

    pub fn as_dense(&self) -> Option<&Matrix> {
        match self {
            Linear::Dense(m) => Some(m),
            Linear::Quantized(_) => None,
        }
    }

    pub fn as_dense_mut(&mut self) -> Option<&mut Matrix> {
        match self {
            Linear::Dense(m) => Some(m),
            Linear::Quantized(_) => None,
        }
    }

    pub fn to_dense(&self) -> Matrix {
        match self {
            Linear::Dense(m) => m.clone(),
            Linear::Quantized(q) => super::dequantize(q),
        }
    }

    pub fn quantized(&self, bits: BitWidth) -> Result<Self> {
        Ok(Linear::Quantized(quantize(&self.to_dense(), bits)?))
    }

    pub fn resident_bytes(&self) -> usize {
        match self {
            Linear::Dense(m) => 4 * m.data().len(),
            Linear::Quantized(q) => q.resident_bytes(),
        }
    }

    /// `y = W x`.
    pub fn apply(&self, x: &[f32], y: &mut [f32]) {
        assert_eq!(x.len(), self.in_features(), "linear input width");
        assert_eq!(y.len(), self.out_features(), "linear output width");
        match self {
            Linear::Dense(m) => {
                for (i, out) in y.iter_mut().enumerate() {
                    *out = dot(m.row(i), x) as f32;
                }
            }
            Linear::Quantized(q) => {
                for (i, out) in y.iter_mut().enumerate() {
                    *out = q.row_dot(i, x) as f32;
                }
            }
        }
    }

    pub fn apply_vec(&self, x: &[f32]) -> Vec<f32> {
        let mut y = alloc::vec![0.0; self.out_features()];
        self.apply(x, &mut y);
        y
    }

    /// Applies the projection to every row of `x`, giving `x · Wᵀ`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_features() {
            return Err(Error::Shape(format!(
                "input width {} for a {}x{} projection",
                x.cols(),
                self.out_features(),
                self.in_features()
            )));
        }
        let mut out = Matrix::zeros(x.rows(), self.out_features());
        for t in 0..x.rows() {
            self.apply(x.row(t), out.row_mut(t));
        }
        Ok(out)
    }

    /// Dequantized row `i` of `W` (an embedding lookup when `W` is a table).
    pub fn row(&self, i: usize) -> Vec<f32> {
        match self {
            Linear::Dense(m) => m.row(i).to_vec(),
            Linear::Quantized(q) => q.row_values(i),
        }
    }
}

impl From<Matrix> for Linear {
    fn from(m: Matrix) -> Self {
        Linear::Dense(m)
    }
}
