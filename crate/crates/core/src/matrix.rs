use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;
use core::ops::Index;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, TensorData};

/// Dense row-major f64 matrix. Token matrices are `N x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows.saturating_mul(cols),
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: alloc::vec![0.0; rows * cols],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Dimension("ragged rows".to_string()));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics; a zero-width matrix has no meaningful rows to hand out.
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// Gathers the given rows into a new matrix, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Gathers the given columns into a new matrix, in order.
    pub fn select_cols(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.rows);
        for r in 0..self.rows {
            let row = self.row(r);
            data.extend(idx.iter().map(|&c| row[c]));
        }
        Matrix {
            rows: self.rows,
            cols: idx.len(),
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Reads a rank-2 float tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "expected a rank-2 tensor, got shape {:?}",
                t.shape()
            )));
        }
        let data = t
            .to_f64_vec()
            .ok_or_else(|| Error::Dimension("expected a float tensor, got i64".to_string()))?;
        Matrix::new(t.shape()[0], t.shape()[1], data)
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Ok(Tensor::new(
            alloc::vec![self.rows, self.cols],
            TensorData::F64(self.data.clone()),
        )?)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

/// Attention weights: finite and non-negative. Row `i` holds what token `i`
/// attends to.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap(Matrix);

impl AttentionMap {
    pub fn new(m: Matrix) -> Result<Self> {
        Self::validate(&m, "attention map")?;
        Ok(AttentionMap(m))
    }

    /// Like [`AttentionMap::new`] but names the offending input in errors.
    pub fn named(m: Matrix, what: &'static str) -> Result<Self> {
        Self::validate(&m, what)?;
        Ok(AttentionMap(m))
    }

    fn validate(m: &Matrix, what: &'static str) -> Result<()> {
        for &x in m.as_slice() {
            if !x.is_finite() {
                return Err(Error::NonFinite(what));
            }
            if x < 0.0 {
                return Err(Error::Negative(what));
            }
        }
        Ok(())
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        AttentionMap::new(Matrix::from_rows(rows)?)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn cols(&self) -> usize {
        self.0.cols()
    }

    pub fn is_square(&self) -> bool {
        self.0.rows() == self.0.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    /// Multiplies every weight by `c`. Panics unless `c` is finite and positive.
    pub fn scaled(&self, c: f64) -> Self {
        assert!(c.is_finite() && c > 0.0, "scale must be finite and positive");
        let data = self.0.as_slice().iter().map(|x| x * c).collect();
        AttentionMap(Matrix::new(self.rows(), self.cols(), data).expect("same shape"))
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        AttentionMap(self.0.select_rows(idx))
    }

    pub fn select_cols(&self, idx: &[usize]) -> Self {
        AttentionMap(self.0.select_cols(idx))
    }
}

/// One non-negative score per token.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreVector(pub Vec<f64>);

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl Index<usize> for ScoreVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}
