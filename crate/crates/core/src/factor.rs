//! Exact and incomplete Cholesky factors used as approximation blocks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::cholesky::{
    backward_solve_dense_transposed, backward_solve_sparse_transposed, dense_cholesky,
    forward_solve_dense, forward_solve_sparse, LowerTriangular,
};
use crate::linalg::dense::DenseMatrix;
use crate::linalg::sparse::SparseMatrix;

/// Orders at or below this size are factored densely by default.
pub const DEFAULT_DENSE_THRESHOLD: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorKind {
    ExactDense,
    ExactSparse,
    Incomplete,
}

#[derive(Debug, Clone)]
enum Lower {
    Dense(LowerTriangular),
    Sparse(SparseMatrix),
}

/// A Cholesky-type factor L with L Lᵀ ≈ A.
#[derive(Debug, Clone)]
pub struct CholFactor {
    kind: FactorKind,
    lower: Lower,
}

/// How [`factor_spd`] treats matrices above the dense threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorStrategy {
    /// Exact sparse factorization (incomplete Cholesky with zero drop tolerance).
    Exact,
    Incomplete { droptol: f64 },
}

impl CholFactor {
    pub fn from_dense_lower(l: LowerTriangular) -> Self {
        CholFactor {
            kind: FactorKind::ExactDense,
            lower: Lower::Dense(l),
        }
    }

    /// Factor of a positive diagonal matrix.
    pub fn from_positive_diag(d: &[f64]) -> Result<Self> {
        if let Some((index, &pivot)) = d.iter().enumerate().find(|(_, &v)| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::NotSpd { index, pivot });
        }
        let s: Vec<f64> = d.iter().map(|v| v.sqrt()).collect();
        Ok(CholFactor {
            kind: FactorKind::ExactSparse,
            lower: Lower::Sparse(SparseMatrix::from_diag(&s)),
        })
    }

    pub fn kind(&self) -> FactorKind {
        self.kind
    }

    pub fn order(&self) -> usize {
        match &self.lower {
            Lower::Dense(l) => l.order(),
            Lower::Sparse(l) => l.nrows(),
        }
    }

    /// Stored entries of L.
    pub fn nnz(&self) -> usize {
        match &self.lower {
            Lower::Dense(l) => {
                let n = l.order();
                n * (n + 1) / 2
            }
            Lower::Sparse(l) => l.nnz(),
        }
    }

    /// L⁻¹ b.
    pub fn forward_solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match &self.lower {
            Lower::Dense(l) => forward_solve_dense(l.matrix(), b),
            Lower::Sparse(l) => forward_solve_sparse(l, b),
        }
    }

    /// L⁻ᵀ y.
    pub fn backward_solve(&self, y: &[f64]) -> Result<Vec<f64>> {
        match &self.lower {
            Lower::Dense(l) => backward_solve_dense_transposed(l.matrix(), y),
            Lower::Sparse(l) => backward_solve_sparse_transposed(l, y),
        }
    }

    /// (L Lᵀ)⁻¹ b.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let y = self.forward_solve(b)?;
        self.backward_solve(&y)
    }

    /// L⁻¹ B for a row-major block B, all columns at once.
    pub fn forward_solve_block(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        match &self.lower {
            Lower::Dense(l) => l.forward_solve_matrix(b),
            Lower::Sparse(l) => {
                let n = l.nrows();
                if b.nrows() != n {
                    return Err(Error::dims("forward_solve_block", n, b.nrows()));
                }
                let mut x = b.clone();
                let mut acc = vec![0.0; b.ncols()];
                for i in 0..n {
                    let (cols, vals) = l.row(i);
                    let last = cols.len() - 1;
                    acc.copy_from_slice(x.row(i));
                    for (&k, &v) in cols[..last].iter().zip(&vals[..last]) {
                        for (a, &xk) in acc.iter_mut().zip(x.row(k)) {
                            *a -= v * xk;
                        }
                    }
                    let d = vals[last];
                    for (dst, a) in x.row_mut(i).iter_mut().zip(&acc) {
                        *dst = a / d;
                    }
                }
                Ok(x)
            }
        }
    }

    /// (L Lᵀ) x.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.lower {
            Lower::Dense(l) => {
                let l = l.matrix();
                l.matvec(&l.transpose().matvec(x)?)
            }
            Lower::Sparse(l) => l.spmv(&l.spmv_transpose(x)?),
        }
    }

    /// L as a dense matrix.
    pub fn lower_dense(&self) -> DenseMatrix {
        match &self.lower {
            Lower::Dense(l) => l.matrix().clone(),
            Lower::Sparse(l) => l.to_dense(),
        }
    }

    /// L as a sparse matrix.
    pub fn lower_sparse(&self) -> SparseMatrix {
        match &self.lower {
            Lower::Dense(l) => SparseMatrix::from_dense(l.matrix(), 0.0),
            Lower::Sparse(l) => l.clone(),
        }
    }

    /// L Lᵀ as a dense matrix.
    pub fn reassemble(&self) -> DenseMatrix {
        let l = self.lower_dense();
        l.matmul_transpose(&l).expect("square factor")
    }
}

/// Column-oriented incomplete Cholesky with a drop tolerance.
///
/// An off-diagonal candidate L[i,j] is discarded when
/// |L[i,j]| < droptol·‖A(:,j)‖₂; the diagonal is always kept. With
/// `droptol = 0` every fill entry is kept and the factor is exact.
pub fn ichol_droptol(a: &SparseMatrix, droptol: f64) -> Result<CholFactor> {
    if !a.is_square() {
        return Err(Error::dims("ichol (square)", a.nrows(), a.ncols()));
    }
    if !(droptol >= 0.0) || !droptol.is_finite() {
        return Err(Error::InvalidArgument(format!("droptol must be finite and nonnegative, got {droptol}")));
    }
    let asym = a.asymmetry();
    if asym > 1e-12 * a.max_abs().max(1e-14) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let n = a.nrows();
    let colnorm = a.column_norms();
    let mut cols: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    let mut row_lists: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut next: Vec<usize> = Vec::with_capacity(n);
    let mut w = vec![0.0; n];
    let mut mark = vec![false; n];
    let mut pattern: Vec<usize> = Vec::new();

    for j in 0..n {
        let (ci, vi) = a.row(j);
        for (&c, &v) in ci.iter().zip(vi) {
            if c >= j {
                w[c] += v;
                if !mark[c] {
                    mark[c] = true;
                    pattern.push(c);
                }
            }
        }
        if !mark[j] {
            mark[j] = true;
            pattern.push(j);
        }
        for &k in &row_lists[j] {
            let p = next[k];
            let col = &cols[k];
            debug_assert_eq!(col[p].0, j);
            let ljk = col[p].1;
            for &(i, lik) in &col[p..] {
                w[i] -= lik * ljk;
                if !mark[i] {
                    mark[i] = true;
                    pattern.push(i);
                }
            }
            next[k] = p + 1;
        }
        let pivot = w[j];
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err(Error::BreakdownNonpositivePivot { column: j, pivot });
        }
        let d = pivot.sqrt();
        let tol = droptol * colnorm[j];
        pattern.sort_unstable();
        let mut col = Vec::with_capacity(pattern.len());
        col.push((j, d));
        for &i in &pattern {
            if i != j {
                let v = w[i] / d;
                if v != 0.0 && v.abs() >= tol {
                    col.push((i, v));
                    row_lists[i].push(j);
                }
            }
            w[i] = 0.0;
            mark[i] = false;
        }
        pattern.clear();
        cols.push(col);
        next.push(1);
    }

    let triplets: Vec<(usize, usize, f64)> = cols
        .iter()
        .enumerate()
        .flat_map(|(j, col)| col.iter().map(move |&(i, v)| (i, j, v)))
        .collect();
    let l = SparseMatrix::from_triplets(n, n, &triplets)?;
    Ok(CholFactor {
        kind: if droptol == 0.0 {
            FactorKind::ExactSparse
        } else {
            FactorKind::Incomplete
        },
        lower: Lower::Sparse(l),
    })
}

/// (L Lᵀ)⁻¹ b.
pub fn solve_chol(f: &CholFactor, b: &[f64]) -> Result<Vec<f64>> {
    f.solve(b)
}

/// Factors a symmetric matrix: exactly and densely up to `dense_threshold`,
/// otherwise according to `strategy`.
pub fn factor_spd(a: &SparseMatrix, strategy: FactorStrategy, dense_threshold: usize) -> Result<CholFactor> {
    if !a.is_square() {
        return Err(Error::dims("factor_spd (square)", a.nrows(), a.ncols()));
    }
    if a.nrows() <= dense_threshold {
        return dense_cholesky(&a.to_dense()).map(CholFactor::from_dense_lower);
    }
    match strategy {
        FactorStrategy::Exact => ichol_droptol(a, 0.0).map_err(|e| match e {
            Error::BreakdownNonpositivePivot { column, pivot } => Error::NotSpd { index: column, pivot },
            other => other,
        }),
        FactorStrategy::Incomplete { droptol } => ichol_droptol(a, droptol),
    }
}

/// Exact dense factor of a dense SPD matrix.
pub fn factor_dense(a: &DenseMatrix) -> Result<CholFactor> {
    dense_cholesky(a).map(CholFactor::from_dense_lower)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_fro(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        a.sub(b).unwrap().frobenius() / b.frobenius()
    }

    #[test]
    fn ichol_of_identity_is_identity() {
        for tol in [0.0, 1e-3, 0.5] {
            let f = ichol_droptol(&SparseMatrix::identity(5), tol).unwrap();
            assert_eq!(f.lower_dense(), DenseMatrix::identity(5));
        }
    }

    #[test]
    fn ichol_tridiag_matches_exact() {
        let t = SparseMatrix::tridiag(3, -1.0, 2.0, -1.0);
        let f = ichol_droptol(&t, 0.0).unwrap();
        assert_eq!(f.kind(), FactorKind::ExactSparse);
        assert!(f.reassemble().sub(&t.to_dense()).unwrap().max_abs() <= 1e-12);
        let exact = dense_cholesky(&t.to_dense()).unwrap();
        assert!(f.lower_dense().sub(exact.matrix()).unwrap().max_abs() <= 1e-12);
    }

    #[test]
    fn ichol_with_fill_is_exact_at_zero_tol() {
        // 2-D Laplacian on a 4x4 grid has fill inside the band
        let t = SparseMatrix::tridiag(4, -1.0, 2.0, -1.0);
        let i = SparseMatrix::identity(4);
        let a = i.kron(&t).unwrap().add(&t.kron(&i).unwrap()).unwrap();
        let f = ichol_droptol(&a, 0.0).unwrap();
        assert!(rel_fro(&f.reassemble(), &a.to_dense()) < 1e-14);
        let loose = ichol_droptol(&a, 0.1).unwrap();
        assert!(loose.nnz() < f.nnz());
        assert_eq!(loose.kind(), FactorKind::Incomplete);
    }

    #[test]
    fn ichol_breakdown_on_indefinite() {
        let a = SparseMatrix::from_dense(&DenseMatrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]), 0.0);
        assert!(matches!(
            ichol_droptol(&a, 0.0),
            Err(Error::BreakdownNonpositivePivot { column: 1, .. })
        ));
    }

    #[test]
    fn solve_chol_recovers_solution() {
        let a = SparseMatrix::tridiag(6, -1.0, 4.0, -1.0);
        let x0: Vec<f64> = (0..6).map(|i| (i as f64) - 2.5).collect();
        let b = a.spmv(&x0).unwrap();
        for f in [
            factor_spd(&a, FactorStrategy::Exact, 10).unwrap(),
            factor_spd(&a, FactorStrategy::Exact, 2).unwrap(),
        ] {
            let x = solve_chol(&f, &b).unwrap();
            for (u, v) in x.iter().zip(&x0) {
                assert!((u - v).abs() <= 1e-12 * 2.5);
            }
            assert_eq!(solve_chol(&f, &[0.0; 6]).unwrap(), vec![0.0; 6]);
        }
        let f = factor_spd(&SparseMatrix::identity(3), FactorStrategy::Exact, 10).unwrap();
        assert_eq!(f.solve(&[1.0, -2.0, 3.0]).unwrap(), vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn factor_spd_kinds() {
        let a = SparseMatrix::tridiag(10, -1.0, 3.0, -1.0);
        assert_eq!(factor_spd(&a, FactorStrategy::Exact, 2048).unwrap().kind(), FactorKind::ExactDense);
        let big = SparseMatrix::tridiag(5000, -1.0, 3.0, -1.0);
        let f = factor_spd(&big, FactorStrategy::Incomplete { droptol: 1e-8 }, 2048).unwrap();
        assert_eq!(f.kind(), FactorKind::Incomplete);
        let indef = SparseMatrix::tridiag(4, 2.0, 1.0, 2.0);
        assert!(matches!(factor_spd(&indef, FactorStrategy::Exact, 10), Err(Error::NotSpd { .. })));
        assert!(matches!(factor_spd(&indef, FactorStrategy::Exact, 2), Err(Error::NotSpd { .. })));
    }

    #[test]
    fn block_forward_solve_matches_columns() {
        let a = SparseMatrix::tridiag(5, -1.0, 3.0, -1.0);
        let b = DenseMatrix::from_rows(&[&[1.0, 0.0], &[2.0, 1.0], &[0.0, -1.0], &[1.0, 1.0], &[3.0, 0.5]]);
        for f in [ichol_droptol(&a, 0.0).unwrap(), factor_dense(&a.to_dense()).unwrap()] {
            let x = f.forward_solve_block(&b).unwrap();
            for j in 0..2 {
                let xj = f.forward_solve(&b.column(j)).unwrap();
                for i in 0..5 {
                    assert!((x[(i, j)] - xj[i]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn positive_diag_factor() {
        let f = CholFactor::from_positive_diag(&[4.0, 9.0]).unwrap();
        assert_eq!(f.solve(&[4.0, 9.0]).unwrap(), vec![1.0, 1.0]);
        assert!(CholFactor::from_positive_diag(&[1.0, 0.0]).is_err());
    }
}
