//! Sparse integer count matrices and column-major sparse float matrices.
//!
//! Transition matrices here are large (`N x N` with `N` in the thousands) but
//! concentrate their mass in a narrow band per column, so both the event
//! counts gathered during training and the resulting stochastic matrices are
//! kept sparse.  Counts merge associatively and commutatively, which is what
//! makes fan-out training loops safe to run in parallel and fold back
//! together in any order.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Sparse nonnegative integer counts keyed by `(row, col)`, 0-based.
///
/// Zero counts are never stored.
#[derive(Debug, Clone)]
pub struct CountMatrix {
    rows: usize,
    cols: usize,
    entries: HashMap<(u32, u32), u64>,
}

impl CountMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols, entries: HashMap::new() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Add `by` to the count at `(row, col)`.
    pub fn add(&mut self, row: usize, col: usize, by: u64) {
        debug_assert!(row < self.rows && col < self.cols);
        if by > 0 {
            *self.entries.entry((row as u32, col as u32)).or_insert(0) += by;
        }
    }

    pub fn increment(&mut self, row: usize, col: usize) {
        self.add(row, col, 1);
    }

    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.entries.get(&(row as u32, col as u32)).copied().unwrap_or(0)
    }

    /// Number of stored (nonzero) entries.
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Sum of all counts.
    pub fn total(&self) -> u64 {
        self.entries.values().sum()
    }

    /// Per-column totals (visit counts).
    pub fn col_totals(&self) -> Vec<u64> {
        let mut t = vec![0u64; self.cols];
        for (&(_, c), &v) in &self.entries {
            t[c as usize] += v;
        }
        t
    }

    /// Fold another count matrix into this one (associative, commutative).
    pub fn merge(&mut self, other: &CountMatrix) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (&k, &v) in &other.entries {
            *self.entries.entry(k).or_insert(0) += v;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        self.entries.iter().map(|(&(r, c), &v)| (r as usize, c as usize, v))
    }
}

/// Column-major sparse float matrix: per column a row-sorted `(row, value)` list.
#[derive(Debug, Clone, Default)]
pub struct SparseColMat {
    rows: usize,
    columns: Vec<Vec<(u32, f64)>>,
}

impl SparseColMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, columns: vec![Vec::new(); cols] }
    }

    pub fn from_counts(counts: &CountMatrix) -> Self {
        let mut m = Self::zeros(counts.rows(), counts.cols());
        for (r, c, v) in counts.iter() {
            m.columns[c].push((r as u32, v as f64));
        }
        for col in &mut m.columns {
            col.sort_unstable_by_key(|&(r, _)| r);
        }
        m
    }

    /// Build from dense columns, dropping exact zeros.
    pub fn from_dense_columns(rows: usize, cols: Vec<Vec<f64>>) -> Self {
        let columns = cols
            .into_iter()
            .map(|c| {
                debug_assert_eq!(c.len(), rows);
                c.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(r, &v)| (r as u32, v))
                    .collect()
            })
            .collect();
        Self { rows, columns }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn nnz(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }

    /// Row-sorted entries of column `j` (0-based).
    pub fn column(&self, j: usize) -> &[(u32, f64)] {
        &self.columns[j]
    }

    pub fn set_column(&mut self, j: usize, mut entries: Vec<(u32, f64)>) {
        entries.retain(|&(_, v)| v != 0.0);
        entries.sort_unstable_by_key(|&(r, _)| r);
        debug_assert!(entries.iter().all(|&(r, _)| (r as usize) < self.rows));
        self.columns[j] = entries;
    }

    pub fn col_sum(&self, j: usize) -> f64 {
        self.columns[j].iter().map(|&(_, v)| v).sum()
    }

    /// Column `j` as a dense vector.
    pub fn dense_column(&self, j: usize) -> Vec<f64> {
        let mut d = vec![0.0; self.rows];
        for &(r, v) in &self.columns[j] {
            d[r as usize] = v;
        }
        d
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        match self.columns[col].binary_search_by_key(&(row as u32), |&(r, _)| r) {
            Ok(i) => self.columns[col][i].1,
            Err(_) => 0.0,
        }
    }

    /// Divide every nonzero column by its sum; returns 0-based indices of the
    /// all-zero columns that were left untouched.
    pub fn normalize_columns(&mut self) -> Vec<usize> {
        let mut zero_cols = Vec::new();
        for (j, col) in self.columns.iter_mut().enumerate() {
            let s: f64 = col.iter().map(|&(_, v)| v).sum();
            if s > 0.0 {
                for e in col.iter_mut() {
                    e.1 /= s;
                }
            } else {
                zero_cols.push(j);
            }
        }
        zero_cols
    }

    /// Row-major copy: for each row, its `(col, value)` entries, col-sorted.
    pub fn to_rows(&self) -> Vec<Vec<(u32, f64)>> {
        let mut rows = vec![Vec::new(); self.rows];
        for (j, col) in self.columns.iter().enumerate() {
            for &(r, v) in col {
                rows[r as usize].push((j as u32, v));
            }
        }
        rows
    }

    /// `out += self * x` restricted to columns with `x[j] != 0`.
    pub fn accumulate_matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols());
        debug_assert_eq!(out.len(), self.rows);
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for &(r, v) in &self.columns[j] {
                    out[r as usize] += v * xj;
                }
            }
        }
    }

    /// Kronecker product of the j-th columns of each factor, for every j.
    ///
    /// All factors must have the same column count; the result has
    /// `prod(rows)` rows. Row order follows the first factor as the most
    /// significant digit.
    pub fn khatri_rao(factors: &[SparseColMat]) -> Result<SparseColMat> {
        if factors.is_empty() {
            return Err(Error::Dimension("khatri_rao needs at least one factor".into()));
        }
        let cols = factors[0].cols();
        if factors.iter().any(|f| f.cols() != cols) {
            return Err(Error::Dimension(format!(
                "khatri_rao factors disagree on column count: {:?}",
                factors.iter().map(SparseColMat::cols).collect::<Vec<_>>()
            )));
        }
        let rows: usize = factors.iter().map(SparseColMat::rows).product();
        let mut out = SparseColMat::zeros(rows, cols);
        for j in 0..cols {
            let mut acc: Vec<(u32, f64)> = vec![(0, 1.0)];
            for f in factors {
                let col = f.column(j);
                let mut next = Vec::with_capacity(acc.len() * col.len());
                let stride = f.rows() as u32;
                for &(ra, va) in &acc {
                    for &(rb, vb) in col {
                        next.push((ra * stride + rb, va * vb));
                    }
                }
                acc = next;
            }
            // Kronecker order of sorted factors is already row-sorted.
            out.columns[j] = acc;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_merge_any_order() {
        let mut a = CountMatrix::new(4, 4);
        let mut b = CountMatrix::new(4, 4);
        a.increment(0, 1);
        a.increment(2, 3);
        b.add(2, 3, 5);
        b.increment(1, 1);

        let mut ab = a.clone();
        ab.merge(&b);
        let mut ba = b.clone();
        ba.merge(&a);
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(ab.get(r, c), ba.get(r, c));
            }
        }
        assert_eq!(ab.get(2, 3), 6);
        assert_eq!(ab.total(), 8);
    }

    #[test]
    fn normalize_reports_zero_columns() {
        let mut c = CountMatrix::new(3, 3);
        c.add(0, 0, 2);
        c.add(1, 0, 2);
        c.add(2, 2, 7);
        let mut m = SparseColMat::from_counts(&c);
        let zeros = m.normalize_columns();
        assert_eq!(zeros, vec![1]);
        assert_eq!(m.get(0, 0), 0.5);
        assert_eq!(m.get(1, 0), 0.5);
        assert_eq!(m.get(2, 2), 1.0);
    }

    #[test]
    fn khatri_rao_unit_vectors() {
        // columns [1,0]^T and [0,1]^T compose to [0,1,0,0]^T
        let f1 = SparseColMat::from_dense_columns(2, vec![vec![1.0, 0.0]]);
        let f2 = SparseColMat::from_dense_columns(2, vec![vec![0.0, 1.0]]);
        let k = SparseColMat::khatri_rao(&[f1, f2]).unwrap();
        assert_eq!(k.dense_column(0), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn khatri_rao_single_factor_identity() {
        let f = SparseColMat::from_dense_columns(3, vec![vec![0.2, 0.3, 0.5], vec![1.0, 0.0, 0.0]]);
        let k = SparseColMat::khatri_rao(std::slice::from_ref(&f)).unwrap();
        for j in 0..2 {
            assert_eq!(k.dense_column(j), f.dense_column(j));
        }
    }

    #[test]
    fn khatri_rao_shape_mismatch_rejected() {
        let f1 = SparseColMat::zeros(2, 3);
        let f2 = SparseColMat::zeros(2, 4);
        assert!(SparseColMat::khatri_rao(&[f1, f2]).is_err());
    }

    #[test]
    fn matvec_matches_dense() {
        let m = SparseColMat::from_dense_columns(3, vec![
            vec![1.0, 0.0, 2.0],
            vec![0.0, 3.0, 0.0],
            vec![4.0, 0.0, 5.0],
        ]);
        let x = [1.0, 2.0, 3.0];
        let mut out = [0.0; 3];
        m.accumulate_matvec(&x, &mut out);
        assert_eq!(out, [13.0, 6.0, 17.0]);
    }
}
