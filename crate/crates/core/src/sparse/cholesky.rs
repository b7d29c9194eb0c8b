//! Simplicial up-looking Cholesky factorization `P A P^T = L L^T`.
//!
//! Analysis (fill-reducing ordering, elimination tree, column counts) depends only on the
//! pattern and is kept in a [`SymbolicCholesky`] so that repeated factorizations on a fixed
//! pattern, as in likelihood optimization, pay for it once. Row `k` of `L` is obtained from a
//! sparse triangular solve whose nonzero set is the reach of `A(0..k, k)` in the elimination
//! tree.
//!
//! When the predicted fill makes the problem effectively dense and it is small enough, the
//! numeric phase runs a dense blocked factorization of the same permuted matrix instead.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sparse::{SparsePattern, SparseSpd, DENSE_LIMIT};

const NONE: usize = usize::MAX;

/// Pivots must exceed this fraction of the largest diagonal entry.
pub const PIVOT_TOLERANCE: f64 = 1e-14;

/// Sparse work is priced this many times above dense work per flop when choosing the dense path.
const DENSE_SPEEDUP: f64 = 12.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Ordering {
    /// Approximate minimum degree.
    #[default]
    Amd,
    /// Identity permutation, for debugging.
    Natural,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FactorOptions {
    pub ordering: Ordering,
    /// Permit the dense numeric path when fill is high and `n <= DENSE_LIMIT`.
    pub allow_dense: bool,
}

impl Default for FactorOptions {
    fn default() -> Self {
        Self {
            ordering: Ordering::Amd,
            allow_dense: true,
        }
    }
}

impl FactorOptions {
    pub fn sparse_only() -> Self {
        Self {
            allow_dense: false,
            ..Self::default()
        }
    }
}

/// Pattern-only part of the factorization.
#[derive(Clone, Debug)]
pub struct SymbolicCholesky {
    pattern: Arc<SparsePattern>,
    /// `perm[k]` is the original index eliminated at step `k`.
    perm: Vec<usize>,
    parent: Vec<usize>,
    l_col_ptr: Vec<usize>,
    // Upper triangle of P A P^T, compressed by column, with the source position in `A`.
    c_col_ptr: Vec<usize>,
    c_row_idx: Vec<usize>,
    c_src: Vec<usize>,
    flops: f64,
    dense: bool,
}

impl SymbolicCholesky {
    pub fn analyze(pattern: &Arc<SparsePattern>, options: FactorOptions) -> Result<Self> {
        let n = pattern.n();
        let perm = match options.ordering {
            Ordering::Natural => (0..n).collect(),
            Ordering::Amd => amd_order(pattern)?,
        };
        let mut iperm = vec![0; n];
        for (k, &i) in perm.iter().enumerate() {
            iperm[i] = k;
        }
        let (c_col_ptr, c_row_idx, c_src) = permute_to_upper(pattern, &iperm);
        let parent = etree(n, &c_col_ptr, &c_row_idx);
        let counts = column_counts(n, &c_col_ptr, &c_row_idx, &parent);

        let mut l_col_ptr = Vec::with_capacity(n + 1);
        l_col_ptr.push(0);
        let mut flops = 0.0;
        for &c in &counts {
            l_col_ptr.push(l_col_ptr.last().unwrap() + c);
            flops += (c as f64) * (c as f64);
        }
        let nf = n as f64;
        let dense = options.allow_dense
            && n > 1
            && n <= DENSE_LIMIT
            && flops * DENSE_SPEEDUP > nf * nf * nf / 3.0;
        Ok(Self {
            pattern: Arc::clone(pattern),
            perm,
            parent,
            l_col_ptr,
            c_col_ptr,
            c_row_idx,
            c_src,
            flops,
            dense,
        })
    }

    pub fn n(&self) -> usize {
        self.perm.len()
    }

    /// Entries of `L` (lower triangle, diagonal included).
    pub fn l_nnz(&self) -> usize {
        self.l_col_ptr[self.n()]
    }

    /// Predicted multiply-add count of the sparse numeric phase.
    pub fn flops(&self) -> f64 {
        self.flops
    }

    pub fn uses_dense(&self) -> bool {
        self.dense
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn elimination_tree(&self) -> &[usize] {
        &self.parent
    }

    pub fn factor(self: &Arc<Self>, matrix: &SparseSpd) -> Result<CholFactor> {
        if !(Arc::ptr_eq(&self.pattern, matrix.pattern()) || *self.pattern == **matrix.pattern()) {
            return Err(Error::config(
                "matrix pattern differs from the analyzed pattern",
            ));
        }
        let n = self.n();
        let max_diag = matrix.diagonal().into_iter().fold(0.0f64, f64::max);
        let tol = PIVOT_TOLERANCE * max_diag;
        let storage = if self.dense {
            self.numeric_dense(matrix.values(), tol)?
        } else {
            self.numeric_sparse(matrix.values(), tol)?
        };
        let logdet = 2.0
            * (0..n)
                .map(|k| storage.diag(k, &self.l_col_ptr, n).ln())
                .sum::<f64>();
        Ok(CholFactor {
            symbolic: Arc::clone(self),
            storage,
            logdet,
        })
    }

    fn numeric_sparse(&self, a: &[f64], tol: f64) -> Result<Storage> {
        let n = self.n();
        let lp = &self.l_col_ptr;
        let lnz = lp[n];
        let mut li = vec![0usize; lnz];
        let mut lx = vec![0.0f64; lnz];
        let mut next: Vec<usize> = lp[..n].to_vec();
        let mut x = vec![0.0f64; n];
        let mut stack = vec![0usize; n];
        let mut mark = vec![NONE; n];

        for k in 0..n {
            let top = ereach(
                k,
                &self.c_col_ptr,
                &self.c_row_idx,
                &self.parent,
                &mut stack,
                &mut mark,
            );
            for p in self.c_col_ptr[k]..self.c_col_ptr[k + 1] {
                x[self.c_row_idx[p]] += a[self.c_src[p]];
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &j in &stack[top..] {
                let lkj = x[j] / lx[lp[j]];
                x[j] = 0.0;
                let end = next[j];
                for p in lp[j] + 1..end {
                    x[li[p]] -= lx[p] * lkj;
                }
                d -= lkj * lkj;
                li[end] = k;
                lx[end] = lkj;
                next[j] = end + 1;
            }
            if !(d > tol) {
                return Err(Error::NotPositiveDefinite {
                    pivot: self.perm[k],
                    value: d,
                });
            }
            let p = next[k];
            li[p] = k;
            lx[p] = d.sqrt();
            next[k] = p + 1;
        }
        Ok(Storage::Sparse {
            row_idx: li,
            values: lx,
        })
    }

    fn numeric_dense(&self, a: &[f64], tol: f64) -> Result<Storage> {
        let n = self.n();
        let mut m = faer::Mat::<f64>::zeros(n, n);
        for j in 0..n {
            for p in self.c_col_ptr[j]..self.c_col_ptr[j + 1] {
                // Upper entry (i, j) of the permuted matrix goes to lower position (j, i).
                m[(j, self.c_row_idx[p])] = a[self.c_src[p]];
            }
        }
        let llt = m.llt(faer::Side::Lower).map_err(|e| match e {
            faer::linalg::cholesky::llt::factor::LltError::NonPositivePivot { index } => {
                Error::NotPositiveDefinite {
                    pivot: self.perm[index],
                    value: f64::NAN,
                }
            }
        })?;
        drop(m);
        let l = llt.L();
        let mut values = vec![0.0; n * n];
        for j in 0..n {
            let d = l[(j, j)];
            if !(d * d > tol) {
                return Err(Error::NotPositiveDefinite {
                    pivot: self.perm[j],
                    value: d * d,
                });
            }
            for i in j..n {
                values[j * n + i] = l[(i, j)];
            }
        }
        Ok(Storage::Dense { values })
    }
}

#[derive(Clone, Debug)]
enum Storage {
    Sparse {
        row_idx: Vec<usize>,
        values: Vec<f64>,
    },
    /// Column-major `n x n`, upper part zero.
    Dense { values: Vec<f64> },
}

impl Storage {
    fn diag(&self, k: usize, lp: &[usize], n: usize) -> f64 {
        match self {
            Storage::Sparse { values, .. } => values[lp[k]],
            Storage::Dense { values } => values[k * n + k],
        }
    }
}

/// Cholesky factor with its fill-reducing permutation and cached log-determinant.
#[derive(Clone, Debug)]
pub struct CholFactor {
    symbolic: Arc<SymbolicCholesky>,
    storage: Storage,
    logdet: f64,
}

impl CholFactor {
    pub fn n(&self) -> usize {
        self.symbolic.n()
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    pub fn permutation(&self) -> &[usize] {
        &self.symbolic.perm
    }

    /// Structural entries of `L` as stored (dense storage counts the full lower triangle).
    pub fn l_nnz(&self) -> usize {
        let n = self.n();
        match self.storage {
            Storage::Sparse { .. } => self.symbolic.l_nnz(),
            Storage::Dense { .. } => n * (n + 1) / 2,
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense { .. })
    }

    /// Bytes held by the numeric factor and its index arrays.
    pub fn memory_bytes(&self) -> usize {
        let n = self.n();
        let word = std::mem::size_of::<usize>();
        let symbolic = (3 * n + 1) * word + self.symbolic.c_row_idx.len() * 2 * word;
        let numeric = match &self.storage {
            Storage::Sparse { row_idx, values } => row_idx.len() * word + values.len() * 8,
            Storage::Dense { values } => values.len() * 8,
        };
        symbolic + numeric
    }

    /// `L` as a dense column-major matrix, in the permuted ordering.
    pub fn l_dense(&self) -> Vec<f64> {
        let n = self.n();
        match &self.storage {
            Storage::Dense { values } => values.clone(),
            Storage::Sparse { row_idx, values } => {
                let lp = &self.symbolic.l_col_ptr;
                let mut out = vec![0.0; n * n];
                for j in 0..n {
                    for p in lp[j]..lp[j + 1] {
                        out[j * n + row_idx[p]] = values[p];
                    }
                }
                out
            }
        }
    }

    /// Solve `A x = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        if rhs.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: rhs.len(),
            });
        }
        let perm = &self.symbolic.perm;
        let mut y: Vec<f64> = perm.iter().map(|&i| rhs[i]).collect();
        match &self.storage {
            Storage::Sparse { row_idx, values } => {
                let lp = &self.symbolic.l_col_ptr;
                for j in 0..n {
                    let yj = y[j] / values[lp[j]];
                    y[j] = yj;
                    for p in lp[j] + 1..lp[j + 1] {
                        y[row_idx[p]] -= values[p] * yj;
                    }
                }
                for j in (0..n).rev() {
                    let mut s = y[j];
                    for p in lp[j] + 1..lp[j + 1] {
                        s -= values[p] * y[row_idx[p]];
                    }
                    y[j] = s / values[lp[j]];
                }
            }
            Storage::Dense { values } => {
                for j in 0..n {
                    let col = &values[j * n..(j + 1) * n];
                    let yj = y[j] / col[j];
                    y[j] = yj;
                    for i in j + 1..n {
                        y[i] -= col[i] * yj;
                    }
                }
                for j in (0..n).rev() {
                    let col = &values[j * n..(j + 1) * n];
                    let mut s = y[j];
                    for i in j + 1..n {
                        s -= col[i] * y[i];
                    }
                    y[j] = s / col[j];
                }
            }
        }
        let mut x = vec![0.0; n];
        for (k, &i) in perm.iter().enumerate() {
            x[i] = y[k];
        }
        Ok(x)
    }

    /// `Pᵀ L v` in the original ordering. For standard normal `v` the result has covariance
    /// equal to the factored matrix.
    pub fn lower_mul(&self, v: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        if v.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: v.len(),
            });
        }
        let mut y = vec![0.0; n];
        match &self.storage {
            Storage::Sparse { row_idx, values } => {
                let lp = &self.symbolic.l_col_ptr;
                for j in 0..n {
                    for p in lp[j]..lp[j + 1] {
                        y[row_idx[p]] += values[p] * v[j];
                    }
                }
            }
            Storage::Dense { values } => {
                for j in 0..n {
                    let col = &values[j * n..(j + 1) * n];
                    for i in j..n {
                        y[i] += col[i] * v[j];
                    }
                }
            }
        }
        let mut x = vec![0.0; n];
        for (k, &i) in self.symbolic.perm.iter().enumerate() {
            x[i] = y[k];
        }
        Ok(x)
    }
}

pub fn factorize(matrix: &SparseSpd) -> Result<CholFactor> {
    factorize_with(matrix, FactorOptions::default())
}

pub fn factorize_with(matrix: &SparseSpd, options: FactorOptions) -> Result<CholFactor> {
    Arc::new(SymbolicCholesky::analyze(matrix.pattern(), options)?).factor(matrix)
}

pub fn solve(factor: &CholFactor, rhs: &[f64]) -> Result<Vec<f64>> {
    factor.solve(rhs)
}

pub fn logdet(factor: &CholFactor) -> f64 {
    factor.logdet()
}

fn amd_order(pattern: &SparsePattern) -> Result<Vec<usize>> {
    let n = pattern.n();
    if n <= 1 {
        return Ok((0..n).collect());
    }
    // AMD orders the pattern of A + A^T, so the lower triangle alone is a valid input.
    let (p, _, _) = amd::order::<usize>(
        n,
        pattern.col_ptr(),
        pattern.row_idx(),
        &amd::Control::default(),
    )
    .map_err(|status| Error::config(format!("AMD ordering failed: {status:?}")))?;
    Ok(p)
}

/// Upper triangle of `P A P^T` from the lower triangle of `A`, with source positions.
fn permute_to_upper(
    pattern: &SparsePattern,
    iperm: &[usize],
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let n = pattern.n();
    let cp = pattern.col_ptr();
    let ri = pattern.row_idx();
    let mut counts = vec![0usize; n + 1];
    for j in 0..n {
        for &i in &ri[cp[j]..cp[j + 1]] {
            counts[iperm[i].max(iperm[j]) + 1] += 1;
        }
    }
    for k in 0..n {
        counts[k + 1] += counts[k];
    }
    let col_ptr = counts.clone();
    let mut next = counts;
    let mut row_idx = vec![0; ri.len()];
    let mut src = vec![0; ri.len()];
    for j in 0..n {
        for p in cp[j]..cp[j + 1] {
            let (a, b) = (iperm[ri[p]], iperm[j]);
            let (r, c) = if a < b { (a, b) } else { (b, a) };
            let q = next[c];
            row_idx[q] = r;
            src[q] = p;
            next[c] += 1;
        }
    }
    (col_ptr, row_idx, src)
}

/// Elimination tree of a symmetric matrix given by its upper triangle.
fn etree(n: usize, cp: &[usize], ri: &[usize]) -> Vec<usize> {
    let mut parent = vec![NONE; n];
    let mut ancestor = vec![NONE; n];
    for k in 0..n {
        for &row in &ri[cp[k]..cp[k + 1]] {
            let mut i = row;
            while i != NONE && i < k {
                let next = ancestor[i];
                ancestor[i] = k;
                if next == NONE {
                    parent[i] = k;
                }
                i = next;
            }
        }
    }
    parent
}

/// Nonzero pattern of row `k` of `L` (excluding the diagonal) in topological order, returned
/// as `stack[top..]`.
fn ereach(
    k: usize,
    cp: &[usize],
    ri: &[usize],
    parent: &[usize],
    stack: &mut [usize],
    mark: &mut [usize],
) -> usize {
    let n = parent.len();
    let mut top = n;
    mark[k] = k;
    for &row in &ri[cp[k]..cp[k + 1]] {
        let mut i = row;
        let mut len = 0;
        while mark[i] != k {
            stack[len] = i;
            len += 1;
            mark[i] = k;
            i = parent[i];
        }
        while len > 0 {
            top -= 1;
            len -= 1;
            stack[top] = stack[len];
        }
    }
    top
}

fn column_counts(n: usize, cp: &[usize], ri: &[usize], parent: &[usize]) -> Vec<usize> {
    let mut counts = vec![1usize; n];
    let mut stack = vec![0usize; n];
    let mut mark = vec![NONE; n];
    for k in 0..n {
        let top = ereach(k, cp, ri, parent, &mut stack, &mut mark);
        for &j in &stack[top..] {
            counts[j] += 1;
        }
    }
    counts
}
