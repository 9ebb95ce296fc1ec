//! Forward numeric kernels shared by the model, the objectives, and the
//! autodiff tape. All row-wise reductions subtract the row maximum before
//! exponentiating so finite inputs cannot overflow.

use crate::matrix::{matmul, Matrix, NumError};
use crate::rng::Rng;

/// `x * w + b` with `b` broadcast across rows. `b` must be `1 x h`.
pub fn affine(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix, NumError> {
    if b.rows() != 1 || b.cols() != w.cols() {
        return Err(NumError::dim(
            "affine",
            format!("bias {:?} does not broadcast over {:?}", b.shape(), w.shape()),
        ));
    }
    let mut out = matmul(x, w)?;
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for (o, &bv) in row.iter_mut().zip(b.data().iter()) {
            *o += bv;
        }
    }
    Ok(out)
}

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn sigmoid(x: &Matrix) -> Matrix {
    x.map(|v| {
        if v >= 0.0 {
            1.0 / (1.0 + (-v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        }
    })
}

/// Row-wise softmax with max subtraction. Every output row sums to 1
/// within 1e-12; a constant row maps to the uniform distribution.
pub fn row_softmax(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Row-wise log-softmax, computed as `x - max - ln(sum(exp(x - max)))`.
pub fn row_log_softmax(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v = *v - max - lse;
        }
    }
    out
}

/// Scale each row to unit Euclidean norm. Also returns the original row
/// norms (needed for the backward pass). A row with norm below 1e-12 is
/// reported as degenerate rather than silently blown up.
pub fn row_l2_normalize(x: &Matrix) -> Result<(Matrix, Vec<f64>), NumError> {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(NumError::degenerate(
                "row_l2_normalize",
                format!("row {} has norm {:.3e}", r, norm),
            ));
        }
        for v in row.iter_mut() {
            *v /= norm;
        }
        norms.push(norm);
    }
    Ok((out, norms))
}

/// Feature masking used for view augmentation: each element is zeroed
/// independently with probability `rate` and kept unscaled otherwise.
/// Returns the masked matrix and the 0/1 mask itself. `rate` must lie in
/// [0, 1); `rate == 0` returns the input unchanged with an all-ones mask.
pub fn bernoulli_mask(x: &Matrix, rate: f64, rng: &mut Rng) -> Result<(Matrix, Matrix), NumError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NumError::param(
            "bernoulli_mask",
            format!("rate {} outside [0, 1)", rate),
        ));
    }
    let mut mask = Matrix::filled(x.rows(), x.cols(), 1.0);
    if rate > 0.0 {
        for v in mask.data_mut() {
            if rng.coin(rate) {
                *v = 0.0;
            }
        }
    }
    let masked = x.hadamard(&mask)?;
    Ok((masked, mask))
}

/// Inverted-dropout mask: entries are 0 with probability `rate`, else
/// `1 / (1 - rate)`, so the expected activation is unchanged. Distinct
/// from [`bernoulli_mask`], which never rescales.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut Rng) -> Result<Matrix, NumError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NumError::param(
            "dropout_mask",
            format!("rate {} outside [0, 1)", rate),
        ));
    }
    let keep = 1.0 / (1.0 - rate);
    let mut mask = Matrix::filled(rows, cols, keep);
    for v in mask.data_mut() {
        if rng.coin(rate) {
            *v = 0.0;
        }
    }
    Ok(mask)
}
