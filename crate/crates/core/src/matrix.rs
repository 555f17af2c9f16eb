//! Dense row-major matrix used for forest training and queries.

use serde::{Deserialize, Serialize};

use crate::error::{LpciError, Result};

/// Row-major matrix of f64 with a fixed column count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    n_cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Empty matrix with a fixed column count.
    pub fn new(n_cols: usize) -> Self {
        Self { n_cols, data: Vec::new() }
    }

    /// Builds a matrix from equally sized rows; at least one row required.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| LpciError::Argument("matrix needs at least one row".into()))?;
        let mut m = Matrix::new(first.len());
        for row in rows {
            m.push_row(row)?;
        }
        Ok(m)
    }

    /// Appends one row; its length must match the column count.
    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.n_cols {
            return Err(LpciError::Argument(format!(
                "row has {} values, matrix has {} columns",
                row.len(),
                self.n_cols
            )));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        if self.n_cols == 0 {
            0
        } else {
            self.data.len() / self.n_cols
        }
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Borrow row `i`; panics if out of range.
    pub fn row(&self, i: usize) -> &[f64] {
        let start = i * self.n_cols;
        &self.data[start..start + self.n_cols]
    }
}
