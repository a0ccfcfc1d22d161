//! Triplet-based sparse matrices with real coefficients.

use crate::error::{BemError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    triplets: Vec<(usize, usize, f64)>,
    finalized: bool,
}

impl SparseMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            triplets: Vec::new(),
            finalized: true,
        }
    }

    pub fn from_triplets(rows: usize, cols: usize, triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|(r, c, _)| *r >= rows || *c >= cols) {
            return Err(BemError::InvalidArgument(format!(
                "triplet ({r}, {c}) outside a {rows}x{cols} matrix"
            )));
        }
        let mut m = Self {
            rows,
            cols,
            triplets,
            finalized: false,
        };
        m.finalize();
        Ok(m)
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        assert!(row < self.rows && col < self.cols, "triplet out of range");
        self.triplets.push((row, col, value));
        self.finalized = false;
    }

    /// Sorts by (row, col) and sums duplicates.
    pub fn finalize(&mut self) {
        if self.finalized {
            return;
        }
        self.triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(self.triplets.len());
        for &(r, c, v) in &self.triplets {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        self.triplets = merged;
        self.finalized = true;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.triplets.len()
    }

    pub fn triplets(&self) -> &[(usize, usize, f64)] {
        &self.triplets
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.triplets
            .iter()
            .filter(|t| t.0 == row && t.1 == col)
            .map(|t| t.2)
            .sum()
    }

    /// y = A x
    pub fn apply<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.cols {
            return Err(BemError::DimensionMismatch {
                expected: self.cols,
                actual: x.len(),
            });
        }
        let mut y = vec![T::zero(); self.rows];
        for &(r, c, v) in &self.triplets {
            y[r] += x[c].scale(v);
        }
        Ok(y)
    }

    /// y = Aᵀ x
    pub fn apply_transpose<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.rows {
            return Err(BemError::DimensionMismatch {
                expected: self.rows,
                actual: x.len(),
            });
        }
        let mut y = vec![T::zero(); self.cols];
        for &(r, c, v) in &self.triplets {
            y[c] += x[r].scale(v);
        }
        Ok(y)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.cols]; self.rows];
        for &(r, c, v) in &self.triplets {
            d[r][c] += v;
        }
        d
    }
}
