//! Minimal dense linear algebra and numerically stable primitives.
//!
//! Everything is 64-bit and row-major; one matrix row holds one token's
//! scores or features, which keeps the emission layout `m x k` natural.
//! There is no batching dimension; batching is a loop at the training
//! layer.

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from row-major data; the length must be `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "data length {} does not fill a {}x{} matrix",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from a nested row representation.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(Error::Shape(format!(
                    "row {} has {} columns, expected {}",
                    i,
                    row.len(),
                    c
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { rows: r, cols: c, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, f(i, j));
            }
        }
        m
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

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        debug_assert!(row < self.rows && col < self.cols);
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.rows && col < self.cols);
        self.data[row * self.cols + col] = value;
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        debug_assert!(row < self.rows);
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        debug_assert!(row < self.rows);
        &mut self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    /// `self += scale * other`; shapes must match.
    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) {
        assert_eq!(self.shape(), other.shape(), "add_scaled shape mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Standard matrix product; `a.cols` must equal `b.rows`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &a_ik) in a_row.iter().enumerate() {
            let b_row = b.row(k);
            for (o, &b_kj) in out_row.iter_mut().zip(b_row.iter()) {
                *o += a_ik * b_kj;
            }
        }
    }
    Ok(out)
}

/// `out += x * w` for a row vector `x` of length `w.rows`.
pub(crate) fn row_times_matrix_add(x: &[f64], w: &Matrix, out: &mut [f64]) {
    debug_assert_eq!(x.len(), w.rows);
    debug_assert_eq!(out.len(), w.cols);
    for (k, &xk) in x.iter().enumerate() {
        for (o, &wkj) in out.iter_mut().zip(w.row(k).iter()) {
            *o += xk * wkj;
        }
    }
}

/// `out += y * w^T` for a row vector `y` of length `w.cols`.
pub(crate) fn row_times_matrix_t_add(y: &[f64], w: &Matrix, out: &mut [f64]) {
    debug_assert_eq!(y.len(), w.cols);
    debug_assert_eq!(out.len(), w.rows);
    for (a, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (&yj, &waj) in y.iter().zip(w.row(a).iter()) {
            acc += yj * waj;
        }
        *o += acc;
    }
}

/// Rank-one update `into += col^T * row` (outer product accumulate).
pub(crate) fn outer_add(col: &[f64], row: &[f64], into: &mut Matrix) {
    debug_assert_eq!(col.len(), into.rows);
    debug_assert_eq!(row.len(), into.cols);
    for (a, &ca) in col.iter().enumerate() {
        if ca == 0.0 {
            continue;
        }
        for (o, &rb) in into.row_mut(a).iter_mut().zip(row.iter()) {
            *o += ca * rb;
        }
    }
}

/// Numerically stable `log(sum(exp(v)))`.
///
/// Shifts by the maximum before exponentiating, so inputs around 1000 do
/// not overflow.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain(
            "log_sum_exp of an empty vector".to_string(),
        ));
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Central-difference gradient of a scalar function of a matrix.
///
/// `f` must be deterministic and side-effect-free; the result has the
/// same shape as `at` with entry `(f(x + eps*e_ij) - f(x - eps*e_ij)) / (2*eps)`.
pub fn finite_diff_grad(f: impl Fn(&Matrix) -> f64, at: &Matrix, eps: f64) -> Matrix {
    assert!(eps > 0.0, "finite_diff_grad requires eps > 0");
    let mut point = at.clone();
    let mut grad = Matrix::zeros(at.rows(), at.cols());
    for idx in 0..at.data.len() {
        let original = point.data[idx];
        point.data[idx] = original + eps;
        let plus = f(&point);
        point.data[idx] = original - eps;
        let minus = f(&point);
        point.data[idx] = original;
        grad.data[idx] = (plus - minus) / (2.0 * eps);
    }
    grad
}
