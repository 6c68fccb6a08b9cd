//! Row-major dense matrix with an optional gradient slot.

use crate::error::AscError;
use crate::Result;

/// Dense 2-D matrix of `f64`, row-major, with an optional gradient buffer of
/// identical shape. This is the universal carrier for features, weights,
/// adjacencies, and logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Matrix2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix2 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            grad: None,
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix2 {
            rows,
            cols,
            data: vec![value; rows * cols],
            grad: None,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix2::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(AscError::Param(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix2 {
            rows,
            cols,
            data,
            grad: None,
        })
    }

    /// Builds a matrix from nested row slices; panics on ragged input.
    /// Intended for tests and small literals.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix2 {
            rows: r,
            cols: c,
            data,
            grad: None,
        }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) {
        debug_assert_eq!(grad.len(), self.data.len());
        self.grad = Some(grad);
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Standard matrix product.
    pub fn matmul(&self, other: &Matrix2) -> Result<Matrix2> {
        if self.cols != other.rows {
            return Err(AscError::Shape {
                op: "matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut out = Matrix2::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = &self.data[i * self.cols..(i + 1) * self.cols];
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a_ik) in a_row.iter().enumerate() {
                if a_ik == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b_kj) in out_row.iter_mut().zip(b_row) {
                    *o += a_ik * b_kj;
                }
            }
        }
        Ok(out)
    }

    /// Entrywise product.
    pub fn hadamard(&self, other: &Matrix2) -> Result<Matrix2> {
        if self.shape() != other.shape() {
            return Err(AscError::Shape {
                op: "hadamard",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut out = self.clone();
        out.grad = None;
        for (o, b) in out.data.iter_mut().zip(&other.data) {
            *o *= b;
        }
        Ok(out)
    }

    pub fn add(&self, other: &Matrix2) -> Result<Matrix2> {
        if self.shape() != other.shape() {
            return Err(AscError::Shape {
                op: "add",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut out = self.clone();
        out.grad = None;
        for (o, b) in out.data.iter_mut().zip(&other.data) {
            *o += b;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Matrix2) -> Result<Matrix2> {
        if self.shape() != other.shape() {
            return Err(AscError::Shape {
                op: "sub",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut out = self.clone();
        out.grad = None;
        for (o, b) in out.data.iter_mut().zip(&other.data) {
            *o -= b;
        }
        Ok(out)
    }

    pub fn scale(&self, c: f64) -> Matrix2 {
        let mut out = self.clone();
        out.grad = None;
        for o in out.data.iter_mut() {
            *o *= c;
        }
        out
    }

    pub fn transpose(&self) -> Matrix2 {
        let mut out = Matrix2::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Entrywise max(0, x).
    pub fn relu(&self) -> Matrix2 {
        let mut out = self.clone();
        out.grad = None;
        for o in out.data.iter_mut() {
            if *o < 0.0 {
                *o = 0.0;
            }
        }
        out
    }

    /// Row-wise softmax with max subtraction for overflow safety.
    /// Every output row sums to 1 and entries lie in (0, 1].
    pub fn softmax_rows(&self) -> Matrix2 {
        let mut out = self.clone();
        out.grad = None;
        for i in 0..self.rows {
            let row = &mut out.data[i * self.cols..(i + 1) * self.cols];
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

    /// Frobenius norm (not squared).
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Euclidean norm of row `i`.
    pub fn row_norm(&self, i: usize) -> f64 {
        self.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Stacks matrices on top of each other; all must share a column count.
    pub fn concat_rows(parts: &[&Matrix2]) -> Result<Matrix2> {
        let cols = parts.first().map(|m| m.cols).unwrap_or(0);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(AscError::Shape {
                    op: "concat_rows",
                    lhs: (rows, cols),
                    rhs: p.shape(),
                });
            }
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Ok(Matrix2 {
            rows,
            cols,
            data,
            grad: None,
        })
    }

    /// Copies `len` rows starting at `start`.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Matrix2> {
        if start + len > self.rows {
            return Err(AscError::Param(format!(
                "slice_rows {}..{} out of range for {} rows",
                start,
                start + len,
                self.rows
            )));
        }
        Ok(Matrix2 {
            rows: len,
            cols: self.cols,
            data: self.data[start * self.cols..(start + len) * self.cols].to_vec(),
            grad: None,
        })
    }
}
