//! Dense row-major f64 matrices and the value-level kernels shared by the
//! tape and by plain (non-recorded) numeric code.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("{op}: shape mismatch, left is {lhs:?}, right is {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: tensor must be nonempty")]
    EmptyTensor { op: &'static str },
    #[error("cannot build a {rows}x{cols} tensor from {len} elements")]
    BadConstruction { rows: usize, cols: usize, len: usize },
    #[error("log of non-positive entry at ({row}, {col})")]
    LogDomain { row: usize, col: usize },
    #[error("{op}: non-finite value at ({row}, {col})")]
    NonFinite {
        op: &'static str,
        row: usize,
        col: usize,
    },
    #[error("backward requires a 1x1 loss node, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("row index {index} out of range for {rows} rows")]
    RowOutOfRange { index: usize, rows: usize },
    #[error("{0}")]
    Invalid(String),
}

/// A dense 2-D matrix of f64 in row-major order. Tensors are immutable
/// values; every operation returns a fresh tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumError> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(NumError::BadConstruction {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![1.0; rows * cols],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumError> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(NumError::EmptyTensor { op: "from_rows" });
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(NumError::BadConstruction {
                    rows: rows.len(),
                    cols,
                    len: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row_vector(data: Vec<f64>) -> Result<Self, NumError> {
        let cols = data.len();
        Self::new(1, cols, data)
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
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

    /// First non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|i| (i / self.cols, i % self.cols))
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.shape(), (1, 1));
        self.data[0]
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, NumError> {
        if self.cols != other.rows {
            return Err(NumError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * m..(p + 1) * m];
                let orow = &mut out[i * m..(i + 1) * m];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            rows: n,
            cols: m,
            data: out,
        })
    }

    fn zip(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, NumError> {
        if self.shape() != other.shape() {
            return Err(NumError::ShapeMismatch {
                op,
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| f(*a, *b))
            .collect();
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, NumError> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, NumError> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn mul_elem(&self, other: &Tensor) -> Result<Tensor, NumError> {
        self.zip(other, "mul_elem", |a, b| a * b)
    }

    /// Adds a 1 x cols row vector to every row.
    pub fn add_row_vec(&self, v: &Tensor) -> Result<Tensor, NumError> {
        if v.rows != 1 || v.cols != self.cols {
            return Err(NumError::ShapeMismatch {
                op: "add_row_vec",
                lhs: self.shape(),
                rhs: v.shape(),
            });
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[r * self.cols + c] += v.data[c];
            }
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.map(|v| v + c)
    }

    pub fn clamp_elems(&self, lo: f64, hi: f64) -> Tensor {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn transpose(&self) -> Tensor {
        let mut data = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Tensor {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    /// Row-wise softmax with max-subtraction for stability.
    pub fn softmax_rows(&self) -> Tensor {
        let mut out = self.clone();
        for r in 0..self.rows {
            let row = &mut out.data[r * self.cols..(r + 1) * self.cols];
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

    /// Columnwise maximum as a 1 x cols tensor plus the argmax row per
    /// column (first row on ties).
    pub fn max_over_rows(&self) -> (Tensor, Vec<usize>) {
        let mut maxes = self.row(0).to_vec();
        let mut arg = vec![0usize; self.cols];
        for r in 1..self.rows {
            for c in 0..self.cols {
                let v = self.data[r * self.cols + c];
                if v > maxes[c] {
                    maxes[c] = v;
                    arg[c] = r;
                }
            }
        }
        (
            Tensor {
                rows: 1,
                cols: self.cols,
                data: maxes,
            },
            arg,
        )
    }

    pub fn sum_all(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Sums each column into a 1 x cols tensor.
    pub fn sum_rows(&self) -> Tensor {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c] += self.data[r * self.cols + c];
            }
        }
        Tensor {
            rows: 1,
            cols: self.cols,
            data: out,
        }
    }

    /// Concatenates tensors by stacking rows. All parts must share a width.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor, NumError> {
        if parts.is_empty() {
            return Err(NumError::EmptyTensor { op: "concat_rows" });
        }
        let cols = parts[0].cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(NumError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: (rows, cols),
                    rhs: p.shape(),
                });
            }
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Ok(Tensor { rows, cols, data })
    }

    /// Selects rows by index, in order (rows may repeat).
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor, NumError> {
        if indices.is_empty() {
            return Err(NumError::EmptyTensor { op: "gather_rows" });
        }
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(NumError::RowOutOfRange {
                    index: i,
                    rows: self.rows,
                });
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Tensor {
            rows: indices.len(),
            cols: self.cols,
            data,
        })
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let eye = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(a.matmul(&eye).unwrap(), a);
    }

    #[test]
    fn matmul_row_by_col() {
        // [[1,2]] x [[3],[4]] = [[11]]
        let a = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), (1, 1));
        assert_eq!(c.item(), 11.0);
    }

    #[test]
    fn matmul_shape_mismatch_reports_both_shapes() {
        let a = Tensor::zeros(2, 3);
        let b = Tensor::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)"), "{msg}");
    }

    #[test]
    fn softmax_symmetry_and_closed_form() {
        let t = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let s = t.softmax_rows();
        assert_eq!(s.data(), &[0.5, 0.5]);

        let t = Tensor::from_rows(&[vec![2.0f64.ln(), 0.0]]).unwrap();
        let s = t.softmax_rows();
        assert!((s.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_stable_for_large_inputs() {
        let t = Tensor::from_rows(&[vec![1000.0, 0.0]]).unwrap();
        let s = t.softmax_rows();
        assert!(s.first_non_finite().is_none());
        assert!((s.get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn max_over_rows_by_hand() {
        let t = Tensor::from_rows(&[vec![1.0, 5.0], vec![3.0, 2.0]]).unwrap();
        let (m, arg) = t.max_over_rows();
        assert_eq!(m.data(), &[3.0, 5.0]);
        assert_eq!(arg, vec![1, 0]);
    }

    #[test]
    fn max_over_rows_single_row_is_identity() {
        let t = Tensor::from_rows(&[vec![1.0, -2.0, 0.5]]).unwrap();
        let (m, arg) = t.max_over_rows();
        assert_eq!(m, t);
        assert_eq!(arg, vec![0, 0, 0]);
    }

    #[test]
    fn max_over_rows_tie_takes_lowest_row() {
        let t = Tensor::from_rows(&[vec![7.0], vec![7.0]]).unwrap();
        let (_, arg) = t.max_over_rows();
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn empty_construction_rejected() {
        assert!(Tensor::new(0, 3, vec![]).is_err());
        assert!(Tensor::new(2, 2, vec![1.0]).is_err());
    }

    #[test]
    fn gather_rows_repeats_and_bounds() {
        let t = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let g = t.gather_rows(&[1, 1, 0]).unwrap();
        assert_eq!(g.row(0), &[3.0, 4.0]);
        assert_eq!(g.row(1), &[3.0, 4.0]);
        assert_eq!(g.row(2), &[1.0, 2.0]);
        assert!(t.gather_rows(&[2]).is_err());
    }
}
