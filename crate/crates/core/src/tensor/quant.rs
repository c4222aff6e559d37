use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use half::f16;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::{Error, Result};

/// Supported weight/cache precisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum BitWidth {
    Four,
    Eight,
    Sixteen,
}

impl BitWidth {
    pub const ALL: [BitWidth; 3] = [BitWidth::Sixteen, BitWidth::Eight, BitWidth::Four];

    pub fn bits(self) -> u32 {
        match self {
            BitWidth::Four => 4,
            BitWidth::Eight => 8,
            BitWidth::Sixteen => 16,
        }
    }

    /// Largest representable magnitude, `2^(bits-1) - 1`.
    pub fn qmax(self) -> i32 {
        (1 << (self.bits() - 1)) - 1
    }

    /// Bytes needed for `count` values at this width, rounded up.
    pub fn bytes_for(self, count: u64) -> u64 {
        (count * u64::from(self.bits())).div_ceil(8)
    }
}

impl TryFrom<u32> for BitWidth {
    type Error = Error;

    fn try_from(bits: u32) -> Result<Self> {
        match bits {
            4 => Ok(BitWidth::Four),
            8 => Ok(BitWidth::Eight),
            16 => Ok(BitWidth::Sixteen),
            other => Err(Error::BitWidth(other)),
        }
    }
}

impl From<BitWidth> for u32 {
    fn from(b: BitWidth) -> u32 {
        b.bits()
    }
}

impl fmt::Display for BitWidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bits())
    }
}

/// Symmetric per-row absmax quantized matrix.
///
/// Each row stores an `f16` scale and signed integers packed at the row's bit
/// width; rows start on a byte boundary. 4-bit values are two's complement
/// nibbles, low nibble first.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    rows: usize,
    cols: usize,
    bit_width: BitWidth,
    scales: Vec<f16>,
    payload: Vec<u8>,
}

impl QuantizedMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bit_width(&self) -> BitWidth {
        self.bit_width
    }

    pub fn scale(&self, row: usize) -> f32 {
        self.scales[row].to_f32()
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    fn row_stride(&self) -> usize {
        row_stride(self.cols, self.bit_width)
    }

    /// Payload plus one `f16` scale per row.
    pub fn resident_bytes(&self) -> usize {
        self.payload.len() + 2 * self.scales.len()
    }

    #[inline]
    fn value(&self, row_bytes: &[u8], k: usize) -> i32 {
        match self.bit_width {
            BitWidth::Sixteen => i32::from(i16::from_le_bytes([row_bytes[2 * k], row_bytes[2 * k + 1]])),
            BitWidth::Eight => i32::from(row_bytes[k] as i8),
            BitWidth::Four => {
                let byte = row_bytes[k / 2];
                let nibble = if k.is_multiple_of(2) { byte & 0x0f } else { byte >> 4 };
                // sign-extend the nibble
                i32::from(((nibble << 4) as i8) >> 4)
            }
        }
    }

    /// `scale_row · Σ_k q[row,k] x[k]`, accumulated in `f64`.
    pub fn row_dot(&self, row: usize, x: &[f32]) -> f64 {
        let stride = self.row_stride();
        let bytes = &self.payload[row * stride..(row + 1) * stride];
        let x = &x[..self.cols];
        // four interleaved partial sums over groups of four columns
        let mut s = [0.0f64; 4];
        let mut lanes = |q: [i32; 4], xs: &[f32]| {
            for l in 0..4 {
                s[l] += f64::from(q[l]) * f64::from(xs[l]);
            }
        };
        let groups = self.cols / 4;
        let (xg, tail) = x.split_at(4 * groups);
        match self.bit_width {
            BitWidth::Sixteen => {
                for (q, xs) in bytes.chunks_exact(8).zip(xg.chunks_exact(4)) {
                    let v = |i: usize| i32::from(i16::from_le_bytes([q[2 * i], q[2 * i + 1]]));
                    lanes([v(0), v(1), v(2), v(3)], xs);
                }
            }
            BitWidth::Eight => {
                for (q, xs) in bytes.chunks_exact(4).zip(xg.chunks_exact(4)) {
                    lanes([q[0] as i8, q[1] as i8, q[2] as i8, q[3] as i8].map(i32::from), xs);
                }
            }
            BitWidth::Four => {
                // low nibble is the even column, high nibble the odd one
                for (q, xs) in bytes.chunks_exact(2).zip(xg.chunks_exact(4)) {
                    let lo = |b: u8| i32::from(((b << 4) as i8) >> 4);
                    let hi = |b: u8| i32::from((b as i8) >> 4);
                    lanes([lo(q[0]), hi(q[0]), lo(q[1]), hi(q[1])], xs);
                }
            }
        }
        let mut acc = (s[0] + s[1]) + (s[2] + s[3]);
        for (k, xv) in tail.iter().enumerate() {
            acc += f64::from(self.value(bytes, 4 * groups + k)) * f64::from(*xv);
        }
        acc * f64::from(self.scale(row))
    }

    /// Dequantized copy of one row.
    pub fn row_values(&self, row: usize) -> Vec<f32> {
        let stride = self.row_stride();
        let bytes = &self.payload[row * stride..(row + 1) * stride];
        let scale = self.scale(row);
        (0..self.cols).map(|k| self.value(bytes, k) as f32 * scale).collect()
    }
}

fn row_stride(cols: usize, bits: BitWidth) -> usize {
    (cols * bits.bits() as usize).div_ceil(8)
}

/// Smallest `f16` that is `>= value`.
fn f16_round_up(value: f64) -> f16 {
    let h = f16::from_f64(value);
    if h.to_f64() >= value {
        h
    } else {
        f16::from_bits(h.to_bits() + 1)
    }
}

/// Quantizes each row with `scale = max|row| / (2^(b-1) - 1)`, stored as the
/// next `f16` at or above that value. An all-zero row gets scale zero.
pub fn quantize(w: &Matrix, bit_width: BitWidth) -> Result<QuantizedMatrix> {
    if w.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("quantize input"));
    }
    let qmax = bit_width.qmax();
    let stride = row_stride(w.cols(), bit_width);
    let mut scales = Vec::with_capacity(w.rows());
    let mut payload = vec![0u8; stride * w.rows()];
    for r in 0..w.rows() {
        let row = w.row(r);
        let amax = row.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        let scale = if amax == 0.0 {
            f16::ZERO
        } else {
            f16_round_up(f64::from(amax) / f64::from(qmax))
        };
        if scale.is_infinite() {
            return Err(Error::ScaleOverflow(r));
        }
        scales.push(scale);
        let s = scale.to_f64();
        let out = &mut payload[r * stride..(r + 1) * stride];
        for (k, v) in row.iter().enumerate() {
            let q = if s == 0.0 {
                0
            } else {
                (libm::round(f64::from(*v) / s) as i32).clamp(-qmax, qmax)
            };
            match bit_width {
                BitWidth::Sixteen => out[2 * k..2 * k + 2].copy_from_slice(&(q as i16).to_le_bytes()),
                BitWidth::Eight => out[k] = q as i8 as u8,
                BitWidth::Four => {
                    let nibble = (q as u8) & 0x0f;
                    if k % 2 == 0 {
                        out[k / 2] |= nibble;
                    } else {
                        out[k / 2] |= nibble << 4;
                    }
                }
            }
        }
    }
    Ok(QuantizedMatrix {
        rows: w.rows(),
        cols: w.cols(),
        bit_width,
        scales,
        payload,
    })
}

pub fn dequantize(q: &QuantizedMatrix) -> Matrix {
    let mut data = Vec::with_capacity(q.rows * q.cols);
    for r in 0..q.rows {
        data.extend(q.row_values(r));
    }
    Matrix::from_vec(q.rows, q.cols, data).expect("dequantized values are finite")
}
