//! Sparse symmetric positive-definite covariance matrices on compact-support patterns, and
//! their Cholesky factorization.
//!
//! Matrices are stored as the lower triangle (diagonal included) in compressed-column form.

mod cholesky;

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{self, Dataset, Location, SpatialIndex};
use crate::kernels::{Covariance, CovarianceModel};

pub use cholesky::{
    factorize, factorize_with, logdet, solve, CholFactor, FactorOptions, Ordering, SymbolicCholesky,
};

/// Largest problem handled by dense code paths (plain Matérn assembly, dense factorization).
pub const DENSE_LIMIT: usize = 5000;

/// Compressed-column lower-triangular pattern, diagonal first in every column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparsePattern {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
}

impl SparsePattern {
    pub fn new(n: usize, col_ptr: Vec<usize>, row_idx: Vec<usize>) -> Result<Self> {
        if col_ptr.len() != n + 1 || col_ptr[0] != 0 || col_ptr[n] != row_idx.len() {
            return Err(Error::config(
                "column pointers inconsistent with dimension or row indices",
            ));
        }
        for j in 0..n {
            if col_ptr[j] > col_ptr[j + 1] {
                return Err(Error::config(format!(
                    "column pointers decrease at column {j}"
                )));
            }
            let col = &row_idx[col_ptr[j]..col_ptr[j + 1]];
            if col.first() != Some(&j) {
                return Err(Error::config(format!(
                    "column {j} does not start with its diagonal"
                )));
            }
            if col.windows(2).any(|w| w[0] >= w[1]) || col.last().is_some_and(|&i| i >= n) {
                return Err(Error::config(format!(
                    "row indices of column {j} not strictly increasing or out of range"
                )));
            }
        }
        Ok(Self {
            n,
            col_ptr,
            row_idx,
        })
    }

    pub(crate) fn from_parts_unchecked(n: usize, col_ptr: Vec<usize>, row_idx: Vec<usize>) -> Self {
        Self {
            n,
            col_ptr,
            row_idx,
        }
    }

    pub fn diagonal(n: usize) -> Self {
        Self {
            n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Stored entries in the lower triangle.
    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn column(&self, j: usize) -> &[usize] {
        &self.row_idx[self.col_ptr[j]..self.col_ptr[j + 1]]
    }

    /// Fraction of structurally nonzero entries of the full symmetric matrix.
    pub fn density(&self) -> f64 {
        let n = self.n as f64;
        (2.0 * self.nnz() as f64 - n) / (n * n)
    }
}

/// Symmetric matrix given by its lower triangle.
#[derive(Clone, Debug)]
pub struct SparseSpd {
    pattern: Arc<SparsePattern>,
    values: Vec<f64>,
}

impl SparseSpd {
    pub fn new(pattern: Arc<SparsePattern>, values: Vec<f64>) -> Result<Self> {
        if values.len() != pattern.nnz() {
            return Err(Error::Dimension {
                expected: pattern.nnz(),
                got: values.len(),
            });
        }
        Ok(Self { pattern, values })
    }

    /// Dense symmetric input in row-major order; only the lower triangle is read and exact
    /// zeros off the diagonal are dropped.
    pub fn from_dense(n: usize, dense: &[f64]) -> Result<Self> {
        if dense.len() != n * n {
            return Err(Error::Dimension {
                expected: n * n,
                got: dense.len(),
            });
        }
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for j in 0..n {
            for i in j..n {
                let v = dense[i * n + j];
                if i == j || v != 0.0 {
                    row_idx.push(i);
                    values.push(v);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Self::new(Arc::new(SparsePattern::new(n, col_ptr, row_idx)?), values)
    }

    pub fn n(&self) -> usize {
        self.pattern.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn pattern(&self) -> &Arc<SparsePattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn density(&self) -> f64 {
        self.pattern.density()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n())
            .map(|j| self.values[self.pattern.col_ptr[j]])
            .collect()
    }

    /// Entry `(i, j)` of the symmetric matrix.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let lo = self.pattern.col_ptr[j];
        match self.pattern.column(j).binary_search(&i) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    /// `A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        if x.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; n];
        for j in 0..n {
            let lo = self.pattern.col_ptr[j];
            y[j] += self.values[lo] * x[j];
            for p in lo + 1..self.pattern.col_ptr[j + 1] {
                let i = self.pattern.row_idx[p];
                y[i] += self.values[p] * x[j];
                y[j] += self.values[p] * x[i];
            }
        }
        Ok(y)
    }

    /// Full matrix, row-major.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n * n];
        for j in 0..n {
            for p in self.pattern.col_ptr[j]..self.pattern.col_ptr[j + 1] {
                let i = self.pattern.row_idx[p];
                out[i * n + j] = self.values[p];
                out[j * n + i] = self.values[p];
            }
        }
        out
    }

    /// MatrixMarket coordinate dump (symmetric, lower triangle, 1-based indices).
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real symmetric")?;
        writeln!(w, "{} {} {}", self.n(), self.n(), self.nnz())?;
        for j in 0..self.n() {
            for p in self.pattern.col_ptr[j]..self.pattern.col_ptr[j + 1] {
                writeln!(
                    w,
                    "{} {} {}",
                    self.pattern.row_idx[p] + 1,
                    j + 1,
                    self.values[p]
                )?;
            }
        }
        Ok(())
    }
}

pub fn density(matrix: &SparseSpd) -> f64 {
    matrix.density()
}

/// Pattern and pairwise distances for a fixed location set and cutoff. Reassembling for new
/// parameter values only re-evaluates the covariance at the stored distances.
#[derive(Clone, Debug)]
pub struct CovarianceStructure {
    pattern: Arc<SparsePattern>,
    dist: Vec<f64>,
}

impl CovarianceStructure {
    /// `radius = None` stores every pair; allowed up to [`DENSE_LIMIT`] locations.
    pub fn new(locations: &[Location], radius: Option<f64>) -> Result<Self> {
        match radius {
            Some(r) => {
                let index = geometry::build_index(locations)?;
                Self::from_index(&index, r)
            }
            None => {
                if locations.len() > DENSE_LIMIT {
                    return Err(Error::Size(format!(
                        "{} locations without a finite covariance support exceeds the dense limit of {DENSE_LIMIT}; \
                         use a tapered or Wendland model or pass a truncation radius",
                        locations.len()
                    )));
                }
                let lower = geometry::lower_all_pairs(locations);
                Ok(Self::from_lower(locations.len(), lower))
            }
        }
    }

    pub fn from_index(index: &SpatialIndex, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::domain(format!(
                "cutoff radius must be > 0, got {radius}"
            )));
        }
        Ok(Self::from_lower(
            index.len(),
            geometry::lower_neighbors(index, radius),
        ))
    }

    fn from_lower(n: usize, lower: geometry::LowerNeighbors) -> Self {
        Self {
            pattern: Arc::new(SparsePattern::from_parts_unchecked(
                n,
                lower.col_ptr,
                lower.row_idx,
            )),
            dist: lower.dist,
        }
    }

    pub fn pattern(&self) -> &Arc<SparsePattern> {
        &self.pattern
    }

    pub fn distances(&self) -> &[f64] {
        &self.dist
    }

    pub fn assemble(&self, cov: &Covariance) -> SparseSpd {
        let values = self
            .dist
            .par_iter()
            .with_min_len(4096)
            .map(|&d| cov.at(d))
            .collect();
        SparseSpd {
            pattern: Arc::clone(&self.pattern),
            values,
        }
    }
}

/// Covariance matrix of `dataset` under `model`, stored on the pattern of pairs within the
/// model's support. Plain Matérn needs `truncation` beyond [`DENSE_LIMIT`] points.
pub fn assemble(
    dataset: &Dataset,
    model: &CovarianceModel,
    truncation: Option<f64>,
) -> Result<SparseSpd> {
    let cov = model.covariance()?;
    let radius = match (model.support_radius(), truncation) {
        (Some(s), Some(t)) => Some(s.min(t)),
        (s, t) => s.or(t),
    };
    let structure = CovarianceStructure::new(dataset.locations(), radius)?;
    Ok(structure.assemble(&cov))
}
