//! Binary feature-assignment matrices with a row-count cache.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// An N x I binary matrix Z. Row counts J_n are cached and kept in sync by
/// every mutating operation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: Vec<Vec<u8>>,
    width: usize,
    row_counts: Vec<usize>,
}

impl FeatureMatrix {
    pub fn zeros(n_rows: usize, width: usize) -> Self {
        FeatureMatrix {
            rows: vec![vec![0; width]; n_rows],
            width,
            row_counts: vec![0; n_rows],
        }
    }

    /// Build from explicit rows; all rows must share one width.
    pub fn from_rows(rows: Vec<Vec<u8>>) -> Result<Self> {
        let width = rows.first().map_or(0, |r| r.len());
        for r in &rows {
            if r.len() != width {
                return Err(Error::DimensionMismatch {
                    expected: width,
                    got: r.len(),
                    context: "feature matrix row width",
                });
            }
            if r.iter().any(|&v| v > 1) {
                return Err(Error::invalid("feature matrix entries must be 0 or 1"));
            }
        }
        let row_counts = rows.iter().map(|r| r.iter().map(|&v| v as usize).sum()).collect();
        Ok(FeatureMatrix { rows, width, row_counts })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, n: usize, i: usize) -> u8 {
        self.rows[n][i]
    }

    pub fn set(&mut self, n: usize, i: usize, value: u8) {
        debug_assert!(value <= 1);
        let old = self.rows[n][i];
        self.rows[n][i] = value;
        self.row_counts[n] = self.row_counts[n] + value as usize - old as usize;
    }

    pub fn row(&self, n: usize) -> &[u8] {
        &self.rows[n]
    }

    pub fn set_row(&mut self, n: usize, row: Vec<u8>) -> Result<()> {
        if row.len() != self.width {
            return Err(Error::DimensionMismatch {
                expected: self.width,
                got: row.len(),
                context: "feature matrix row width",
            });
        }
        self.row_counts[n] = row.iter().map(|&v| v as usize).sum();
        self.rows[n] = row;
        Ok(())
    }

    pub fn row_count(&self, n: usize) -> usize {
        self.row_counts[n]
    }

    pub fn row_counts(&self) -> &[usize] {
        &self.row_counts
    }

    /// Column sums m_i.
    pub fn column_counts(&self) -> Vec<usize> {
        let mut m = vec![0usize; self.width];
        for r in &self.rows {
            for (i, &v) in r.iter().enumerate() {
                m[i] += v as usize;
            }
        }
        m
    }

    /// Append zero columns on the right (growing-width samplers).
    pub fn grow_width(&mut self, new_width: usize) {
        if new_width <= self.width {
            return;
        }
        for r in &mut self.rows {
            r.resize(new_width, 0);
        }
        self.width = new_width;
    }

    /// Append a row, growing the width if the row is wider than the matrix.
    pub fn push_row(&mut self, row: Vec<u8>) {
        if row.len() > self.width {
            self.grow_width(row.len());
        }
        let mut row = row;
        row.resize(self.width, 0);
        self.row_counts.push(row.iter().map(|&v| v as usize).sum());
        self.rows.push(row);
    }

    /// Remove the columns at the given (sorted, deduplicated) indices.
    pub fn drop_columns(&mut self, cols: &[usize]) {
        if cols.is_empty() {
            return;
        }
        for r in &mut self.rows {
            let mut keep = Vec::with_capacity(self.width - cols.len());
            let mut drop_iter = cols.iter().peekable();
            for (i, &v) in r.iter().enumerate() {
                if drop_iter.peek() == Some(&&i) {
                    drop_iter.next();
                } else {
                    keep.push(v);
                }
            }
            *r = keep;
        }
        self.width -= cols.len();
        for (n, r) in self.rows.iter().enumerate() {
            self.row_counts[n] = r.iter().map(|&v| v as usize).sum();
        }
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_rows(), self.width, |n, i| self.rows[n][i] as f64)
    }

    /// Recompute the cache from scratch (test support).
    pub fn recomputed_row_counts(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.iter().map(|&v| v as usize).sum()).collect()
    }
}
