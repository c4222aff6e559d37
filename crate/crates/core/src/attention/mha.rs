use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{dot, softmax_in_place, Linear, Matrix, RopeTable};
use crate::{Error, Result};

/// Textbook multi-head attention weights, used as an equivalence target.
#[derive(Debug, Clone, PartialEq)]
pub struct MhaWeights {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

/// Causal multi-head attention over rows of `h` at positions `0..N`.
///
/// With `rope_theta`, queries and keys of every head are rotated over the
/// full head width. The softmax only ever sees keys `j <= t`.
pub fn mha_reference(
    d_model: usize,
    n_heads: usize,
    weights: &MhaWeights,
    h: &Matrix,
    rope_theta: Option<f64>,
) -> Result<Matrix> {
    if h.cols() != d_model || weights.q.in_features() != d_model {
        return Err(Error::Shape(format!("hidden width {} != {d_model}", h.cols())));
    }
    let width = weights.q.out_features();
    if !width.is_multiple_of(n_heads) || weights.k.out_features() != width || weights.v.out_features() != width {
        return Err(Error::Shape(
            "q/k/v widths must agree and split evenly across heads".into(),
        ));
    }
    let dh = width / n_heads;
    let q = weights.q.forward(h)?;
    let k = weights.k.forward(h)?;
    let v = weights.v.forward(h)?;
    let (mut q, mut k) = (q, k);
    if let Some(theta) = rope_theta {
        let table = RopeTable::new(dh, theta)?;
        for t in 0..h.rows() {
            table.rotate_heads(q.row_mut(t), t);
            table.rotate_heads(k.row_mut(t), t);
        }
    }
    let scale = 1.0 / libm::sqrt(dh as f64);
    let mut concat = Matrix::zeros(h.rows(), width);
    for t in 0..h.rows() {
        for head in 0..n_heads {
            let range = head * dh..(head + 1) * dh;
            let mut p: Vec<f64> = (0..=t)
                .map(|j| dot(&q.row(t)[range.clone()], &k.row(j)[range.clone()]) * scale)
                .collect();
            softmax_in_place(&mut p);
            let mut acc = vec![0.0f64; dh];
            for (j, pj) in p.iter().enumerate() {
                for (a, x) in acc.iter_mut().zip(&v.row(j)[range.clone()]) {
                    *a += pj * f64::from(*x);
                }
            }
            for (o, a) in concat.row_mut(t)[range].iter_mut().zip(acc) {
                *o = a as f32;
            }
        }
    }
    weights.out.forward(&concat)
}
