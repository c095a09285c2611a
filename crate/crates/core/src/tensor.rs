//! Dense column-major matrices.
//!
//! Batches are stored with one example per column, so a `d x B` activation
//! batch keeps each activation vector contiguous in memory.

use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from column-major storage.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == rows * cols,
            Shape,
            "expected {} values for a {rows}x{cols} matrix, got {}",
            rows * cols,
            data.len()
        );
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row-major storage (handy for writing literals).
    pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        ensure!(
            data.len() == rows * cols,
            Shape,
            "expected {} values for a {rows}x{cols} matrix, got {}",
            rows * cols,
            data.len()
        );
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.set(r, c, data[r * cols + c]);
            }
        }
        Ok(m)
    }

    /// Stacks equal-length vectors as columns.
    pub fn from_columns<V: AsRef<[f64]>>(columns: &[V]) -> Result<Self> {
        ensure!(
            !columns.is_empty(),
            Shape,
            "at least one column is required"
        );
        let rows = columns[0].as_ref().len();
        let mut data = Vec::with_capacity(rows * columns.len());
        for (j, col) in columns.iter().enumerate() {
            let col = col.as_ref();
            ensure!(
                col.len() == rows,
                Shape,
                "column {j} has length {} but column 0 has length {rows}",
                col.len()
            );
            data.extend_from_slice(col);
        }
        Ok(Self {
            rows,
            cols: columns.len(),
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[c * self.rows + r]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[c * self.rows + r] = v;
    }

    #[inline]
    pub fn column(&self, c: usize) -> &[f64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    #[inline]
    pub fn column_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> + '_ {
        // chunks_exact panics on a zero chunk size
        let rows = self.rows.max(1);
        self.data
            .chunks_exact(rows)
            .take(if self.rows == 0 { 0 } else { self.cols })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Copies a subset of columns, in the given order.
    pub fn select_columns(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.rows * indices.len());
        for &j in indices {
            data.extend_from_slice(self.column(j));
        }
        Self {
            rows: self.rows,
            cols: indices.len(),
            data,
        }
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn hcat(parts: &[&Matrix]) -> Result<Self> {
        ensure!(!parts.is_empty(), Shape, "nothing to concatenate");
        let rows = parts[0].rows;
        let mut data = Vec::new();
        let mut cols = 0;
        for p in parts {
            ensure!(
                p.rows == rows,
                Shape,
                "row count {} does not match {rows}",
                p.rows
            );
            data.extend_from_slice(&p.data);
            cols += p.cols;
        }
        Ok(Self { rows, cols, data })
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &Matrix) -> Result<Self> {
        ensure!(
            self.shape() == other.shape(),
            Shape,
            "cannot subtract {:?} from {:?}",
            other.shape(),
            self.shape()
        );
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn squared_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    squared_norm(a).sqrt()
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_literal_matches_accessors() {
        let m = Matrix::from_row_major(2, 3, &[1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(m.get(0, 2), 3.0);
        assert_eq!(m.get(1, 0), 4.0);
        assert_eq!(m.column(1), &[2.0, 5.0]);
    }

    #[test]
    fn from_columns_rejects_ragged_input() {
        assert!(Matrix::from_columns(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn select_and_hcat() {
        let m = Matrix::from_columns(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let s = m.select_columns(&[2, 0]);
        assert_eq!(s.as_slice(), &[3.0, 1.0]);
        let h = Matrix::hcat(&[&s, &m]).unwrap();
        assert_eq!(h.cols(), 5);
    }
}
