//! Dense row-major `f64` matrices and the handful of linear-algebra kernels
//! the rest of the crate is built on.
//!
//! Shapes are checked on every public operation and reported as
//! [`NumError::Dim`]. Inner products go through `matrixmultiply`'s dgemm;
//! everything else is plain loops over the backing `Vec<f64>`.

use thiserror::Error;

/// Numeric-layer failures: shape mismatches, invalid parameters, and
/// degenerate inputs (for example a zero-norm row fed to a normalizer).
#[derive(Debug, Error)]
pub enum NumError {
    #[error("{op}: dimension mismatch: {detail}")]
    Dim { op: &'static str, detail: String },
    #[error("{op}: invalid parameter: {detail}")]
    Param { op: &'static str, detail: String },
    #[error("{op}: degenerate input: {detail}")]
    Degenerate { op: &'static str, detail: String },
    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },
}

impl NumError {
    pub fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        NumError::Dim { op, detail: detail.into() }
    }
    pub fn param(op: &'static str, detail: impl Into<String>) -> Self {
        NumError::Param { op, detail: detail.into() }
    }
    pub fn degenerate(op: &'static str, detail: impl Into<String>) -> Self {
        NumError::Degenerate { op, detail: detail.into() }
    }
}

/// Row-major dense matrix. `rows == 0` is legal and used for empty
/// candidate sets; `cols` stays meaningful so shape checks still work.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumError> {
        if data.len() != rows * cols {
            return Err(NumError::dim(
                "from_vec",
                format!("{}x{} needs {} elements, got {}", rows, cols, rows * cols, data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Build from nested rows. Every row must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumError> {
        if rows.is_empty() {
            return Ok(Matrix::zeros(0, 0));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(NumError::dim(
                    "from_rows",
                    format!("row 0 has {} columns, row {} has {}", cols, i, r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Rows as owned vectors; handy at test boundaries.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, NumError> {
        self.zip("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, NumError> {
        self.zip("sub", other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix, NumError> {
        self.zip("hadamard", other, |a, b| a * b)
    }

    fn zip(
        &self,
        op: &'static str,
        other: &Matrix,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix, NumError> {
        if self.shape() != other.shape() {
            return Err(NumError::dim(
                op,
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    /// In-place `self += other * s`.
    pub fn add_scaled(&mut self, other: &Matrix, s: f64) -> Result<(), NumError> {
        if self.shape() != other.shape() {
            return Err(NumError::dim(
                "add_scaled",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b * s;
        }
        Ok(())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Sum of all elements.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Squared Frobenius norm.
    pub fn frob_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Stack `self` above `other` (column counts must agree; zero-row
    /// operands are fine).
    pub fn concat_rows(&self, other: &Matrix) -> Result<Matrix, NumError> {
        if self.rows > 0 && other.rows > 0 && self.cols != other.cols {
            return Err(NumError::dim(
                "concat_rows",
                format!("{} vs {} columns", self.cols, other.cols),
            ));
        }
        let cols = if self.rows > 0 { self.cols } else { other.cols };
        let mut data = Vec::with_capacity((self.rows + other.rows) * cols);
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Matrix { rows: self.rows + other.rows, cols, data })
    }

    /// Copy of the rows selected by `idx`, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Matrix, NumError> {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &r in idx {
            if r >= self.rows {
                return Err(NumError::dim(
                    "select_rows",
                    format!("row {} out of {}", r, self.rows),
                ));
            }
            data.extend_from_slice(self.row(r));
        }
        Ok(Matrix { rows: idx.len(), cols: self.cols, data })
    }
}

fn gemm(
    op: &'static str,
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
) -> Matrix {
    let mut out = Matrix::zeros(m, n);
    if m == 0 || n == 0 {
        return out;
    }
    if k == 0 {
        return out;
    }
    let _ = op;
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

/// `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix, NumError> {
    if a.cols != b.rows {
        return Err(NumError::dim(
            "matmul",
            format!("{:?} * {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(gemm(
        "matmul",
        a.rows,
        a.cols,
        b.cols,
        &a.data,
        a.cols as isize,
        1,
        &b.data,
        b.cols as isize,
        1,
    ))
}

/// `a * b^T` without materializing the transpose.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix, NumError> {
    if a.cols != b.cols {
        return Err(NumError::dim(
            "matmul_nt",
            format!("{:?} * {:?}^T", a.shape(), b.shape()),
        ));
    }
    Ok(gemm(
        "matmul_nt",
        a.rows,
        a.cols,
        b.rows,
        &a.data,
        a.cols as isize,
        1,
        &b.data,
        1,
        b.cols as isize,
    ))
}

/// `a^T * b` without materializing the transpose.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix, NumError> {
    if a.rows != b.rows {
        return Err(NumError::dim(
            "matmul_tn",
            format!("{:?}^T * {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(gemm(
        "matmul_tn",
        a.cols,
        a.rows,
        b.cols,
        &a.data,
        1,
        a.cols as isize,
        &b.data,
        b.cols as isize,
        1,
    ))
}
