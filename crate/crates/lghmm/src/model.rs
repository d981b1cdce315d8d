//! The learned hidden Markov model and its on-disk format.
//!
//! `A` is the `N x N` column-stochastic transition matrix
//! (`a_ij = P(X(k+1) = i | X(k) = j)`), `C` the `M x N` emission matrix
//! (`c_ij = P(Y(k) = i | X(k) = j)`).  Columns never visited during training
//! stay all-zero and are reported as diagnostics; the filter treats them as
//! "no information" (uniform).  Models produced by the reduced-complexity
//! trainer additionally carry the per-axis factor matrices whose column-wise
//! Kronecker (Khatri-Rao) product reproduces `A` and `C`.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::sparse::SparseColMat;

/// A trained HMM over the quantizer's composite index sets.
#[derive(Debug, Clone)]
pub struct HmmModel {
    state_count: usize,
    output_count: usize,
    transition: SparseColMat,
    measurement: SparseColMat,
    state_factors: Option<Vec<SparseColMat>>,
    measurement_factors: Option<Vec<SparseColMat>>,
    /// 1-based indices of transition columns left all-zero by training.
    unvisited_transition_cols: Vec<usize>,
    /// 1-based indices of emission columns left all-zero by training.
    unvisited_measurement_cols: Vec<usize>,
}

impl HmmModel {
    /// Assemble a model from raw (possibly unnormalized) sparse matrices.
    ///
    /// Normalizes every nonzero column in place and records the all-zero
    /// columns as diagnostics.
    pub fn from_raw(mut transition: SparseColMat, mut measurement: SparseColMat) -> Result<Self> {
        let n = transition.cols();
        if transition.rows() != n {
            return Err(Error::Dimension(format!(
                "transition matrix must be square, got {}x{}",
                transition.rows(),
                n
            )));
        }
        if measurement.cols() != n {
            return Err(Error::Dimension(format!(
                "measurement matrix must have {n} columns, got {}",
                measurement.cols()
            )));
        }
        let zeros_a: Vec<usize> = transition.normalize_columns().iter().map(|&j| j + 1).collect();
        let zeros_c: Vec<usize> = measurement.normalize_columns().iter().map(|&j| j + 1).collect();
        Ok(Self {
            state_count: n,
            output_count: measurement.rows(),
            transition,
            measurement,
            state_factors: None,
            measurement_factors: None,
            unvisited_transition_cols: zeros_a,
            unvisited_measurement_cols: zeros_c,
        })
    }

    /// Attach factor matrices (already column-normalized).
    pub fn with_factors(
        mut self,
        state_factors: Vec<SparseColMat>,
        measurement_factors: Vec<SparseColMat>,
    ) -> Result<Self> {
        let n_rows: usize = state_factors.iter().map(SparseColMat::rows).product();
        let m_rows: usize = measurement_factors.iter().map(SparseColMat::rows).product();
        if n_rows != self.state_count || m_rows != self.output_count {
            return Err(Error::Dimension(format!(
                "factor row products ({n_rows}, {m_rows}) do not match model ({}, {})",
                self.state_count, self.output_count
            )));
        }
        if state_factors
            .iter()
            .chain(&measurement_factors)
            .any(|f| f.cols() != self.state_count)
        {
            return Err(Error::Dimension("factor matrices must have N columns".into()));
        }
        self.state_factors = Some(state_factors);
        self.measurement_factors = Some(measurement_factors);
        Ok(self)
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn output_count(&self) -> usize {
        self.output_count
    }

    pub fn transition(&self) -> &SparseColMat {
        &self.transition
    }

    pub fn measurement(&self) -> &SparseColMat {
        &self.measurement
    }

    pub fn state_factors(&self) -> Option<&[SparseColMat]> {
        self.state_factors.as_deref()
    }

    pub fn measurement_factors(&self) -> Option<&[SparseColMat]> {
        self.measurement_factors.as_deref()
    }

    pub fn unvisited_transition_cols(&self) -> &[usize] {
        &self.unvisited_transition_cols
    }

    pub fn unvisited_measurement_cols(&self) -> &[usize] {
        &self.unvisited_measurement_cols
    }

    /// Check that every nonzero column of `A` and `C` sums to 1 +/- `tol`.
    pub fn check_column_stochastic(&self, tol: f64) -> Result<()> {
        for (name, mat) in [("transition", &self.transition), ("measurement", &self.measurement)] {
            for j in 0..mat.cols() {
                let s = mat.col_sum(j);
                if s != 0.0 && (s - 1.0).abs() > tol {
                    return Err(Error::InvalidModel(format!(
                        "{name} column {} sums to {s}, off by more than {tol}",
                        j + 1
                    )));
                }
                if mat.column(j).iter().any(|&(_, v)| !(0.0..=1.0 + tol).contains(&v)) {
                    return Err(Error::InvalidModel(format!(
                        "{name} column {} has an entry outside [0, 1]",
                        j + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Write the shared text model format:
    ///
    /// ```text
    /// N M
    /// A nnz
    /// i j value        (1-based, 17 significant digits)
    /// ...
    /// C nnz
    /// i j value
    /// ```
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.state_count, self.output_count)?;
        for (tag, mat) in [("A", &self.transition), ("C", &self.measurement)] {
            writeln!(w, "{tag} {}", mat.nnz())?;
            for j in 0..mat.cols() {
                for &(r, v) in mat.column(j) {
                    writeln!(w, "{} {} {:.16e}", r + 1, j + 1, v)?;
                }
            }
        }
        Ok(())
    }

    pub fn write_file<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(f))
    }

    /// Read a model written by [`Self::write`]. Factor matrices are not part
    /// of the file format, so the result carries none.
    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let mut next_line = || -> Result<(usize, String)> {
            loop {
                match lines.next() {
                    Some((i, l)) => {
                        let l = l?;
                        if !l.trim().is_empty() {
                            return Ok((i + 1, l));
                        }
                    }
                    None => return Err(Error::Parse { line: 0, msg: "unexpected end of file".into() }),
                }
            }
        };
        let (ln, header) = next_line()?;
        let head: Vec<&str> = header.split_whitespace().collect();
        if head.len() != 2 {
            return Err(Error::Parse { line: ln, msg: format!("bad model header: {header}") });
        }
        let n: usize =
            head[0].parse().map_err(|e| Error::Parse { line: ln, msg: format!("{e}") })?;
        let m: usize =
            head[1].parse().map_err(|e| Error::Parse { line: ln, msg: format!("{e}") })?;

        let mut read_block = |tag: &str, rows: usize, cols: usize| -> Result<SparseColMat> {
            let (ln, header) = next_line()?;
            let parts: Vec<&str> = header.split_whitespace().collect();
            if parts.len() != 2 || parts[0] != tag {
                return Err(Error::Parse {
                    line: ln,
                    msg: format!("expected '{tag} <nnz>' header, got: {header}"),
                });
            }
            let nnz: usize =
                parts[1].parse().map_err(|e| Error::Parse { line: ln, msg: format!("{e}") })?;
            let mut cols_acc: Vec<Vec<(u32, f64)>> = vec![Vec::new(); cols];
            for _ in 0..nnz {
                let (ln, line) = next_line()?;
                let f: Vec<&str> = line.split_whitespace().collect();
                if f.len() != 3 {
                    return Err(Error::Parse { line: ln, msg: format!("bad triplet: {line}") });
                }
                let i: usize =
                    f[0].parse().map_err(|e| Error::Parse { line: ln, msg: format!("{e}") })?;
                let j: usize =
                    f[1].parse().map_err(|e| Error::Parse { line: ln, msg: format!("{e}") })?;
                let v: f64 =
                    f[2].parse().map_err(|e| Error::Parse { line: ln, msg: format!("{e}") })?;
                if i < 1 || i > rows || j < 1 || j > cols {
                    return Err(Error::Parse {
                        line: ln,
                        msg: format!("triplet ({i}, {j}) outside {rows}x{cols}"),
                    });
                }
                cols_acc[j - 1].push((i as u32 - 1, v));
            }
            let mut mat = SparseColMat::zeros(rows, cols);
            for (j, entries) in cols_acc.into_iter().enumerate() {
                mat.set_column(j, entries);
            }
            Ok(mat)
        };
        let transition = read_block("A", n, n)?;
        let measurement = read_block("C", m, n)?;
        // Columns are stored normalized; re-running normalization recovers
        // the zero-column diagnostics without changing values.
        Self::from_raw(transition, measurement)
    }

    pub fn read_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(f))
    }
}

/// Total variation distance between two sparse probability columns,
/// `0.5 * sum_i |a_i - b_i|` (both row-sorted).
pub fn column_tv(a: &[(u32, f64)], b: &[(u32, f64)]) -> f64 {
    let mut ia = 0;
    let mut ib = 0;
    let mut acc = 0.0;
    while ia < a.len() || ib < b.len() {
        match (a.get(ia), b.get(ib)) {
            (Some(&(ra, va)), Some(&(rb, vb))) => {
                if ra == rb {
                    acc += (va - vb).abs();
                    ia += 1;
                    ib += 1;
                } else if ra < rb {
                    acc += va.abs();
                    ia += 1;
                } else {
                    acc += vb.abs();
                    ib += 1;
                }
            }
            (Some(&(_, va)), None) => {
                acc += va.abs();
                ia += 1;
            }
            (None, Some(&(_, vb))) => {
                acc += vb.abs();
                ib += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    0.5 * acc
}
