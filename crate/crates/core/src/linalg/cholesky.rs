use crate::error::{Error, Result};
use crate::linalg::dense::DenseMatrix;
use crate::linalg::sparse::SparseMatrix;

/// Dense lower-triangular factor with a strictly positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular(DenseMatrix);

impl LowerTriangular {
    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.0
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    /// Solves L y = b.
    pub fn forward_solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        forward_solve_dense(&self.0, b)
    }

    /// Solves Lᵀ x = y.
    pub fn backward_solve(&self, y: &[f64]) -> Result<Vec<f64>> {
        backward_solve_dense_transposed(&self.0, y)
    }

    /// Solves L X = B for a row-major block of right-hand sides.
    pub fn forward_solve_matrix(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        let l = &self.0;
        let n = l.nrows();
        if b.nrows() != n {
            return Err(Error::dims("forward_solve_matrix", n, b.nrows()));
        }
        let mut x = b.clone();
        let ncols = b.ncols();
        let mut acc = vec![0.0; ncols];
        for i in 0..n {
            acc.copy_from_slice(x.row(i));
            let li = l.row(i);
            for (k, &lik) in li.iter().enumerate().take(i) {
                if lik != 0.0 {
                    for (a, &xk) in acc.iter_mut().zip(x.row(k)) {
                        *a -= lik * xk;
                    }
                }
            }
            let d = li[i];
            for (dst, a) in x.row_mut(i).iter_mut().zip(&acc) {
                *dst = a / d;
            }
        }
        Ok(x)
    }

    /// L Lᵀ as a dense matrix.
    pub fn reassemble(&self) -> DenseMatrix {
        self.0
            .matmul_transpose(&self.0)
            .expect("square factor")
    }
}

/// Dense Cholesky factorization A = L Lᵀ.
///
/// Rejects inputs whose asymmetry exceeds 1e-12·max|A| and reports the
/// first nonpositive pivot as [`Error::NotSpd`].
pub fn dense_cholesky(a: &DenseMatrix) -> Result<LowerTriangular> {
    if !a.is_square() {
        return Err(Error::dims("dense_cholesky (square)", a.nrows(), a.ncols()));
    }
    let scale = a.max_abs().max(1e-14);
    let asym = a.asymmetry();
    if asym > 1e-12 * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let n = a.nrows();
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        {
            let lj = l.row(j);
            d -= lj[..j].iter().map(|v| v * v).sum::<f64>();
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::NotSpd { index: j, pivot: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let s: f64 = {
                let (li, lj) = (l.row(i), l.row(j));
                li[..j].iter().zip(&lj[..j]).map(|(x, y)| x * y).sum()
            };
            l[(i, j)] = (a[(i, j)] - s) / djj;
        }
    }
    Ok(LowerTriangular(l))
}

/// Solves L y = b for a dense lower-triangular L.
pub fn forward_solve_dense(l: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = l.nrows();
    if b.len() != n {
        return Err(Error::dims("forward_solve", n, b.len()));
    }
    let mut y = b.to_vec();
    for i in 0..n {
        let li = l.row(i);
        let s: f64 = li[..i].iter().zip(&y[..i]).map(|(a, b)| a * b).sum();
        y[i] = (y[i] - s) / li[i];
    }
    Ok(y)
}

/// Solves Lᵀ x = y for a dense lower-triangular L (column sweep over rows of L).
pub fn backward_solve_dense_transposed(l: &DenseMatrix, y: &[f64]) -> Result<Vec<f64>> {
    let n = l.nrows();
    if y.len() != n {
        return Err(Error::dims("backward_solve", n, y.len()));
    }
    let mut x = y.to_vec();
    for i in (0..n).rev() {
        let li = l.row(i);
        x[i] /= li[i];
        let xi = x[i];
        for (xk, &lik) in x[..i].iter_mut().zip(&li[..i]) {
            *xk -= lik * xi;
        }
    }
    Ok(x)
}

/// Solves L y = b for a sparse lower-triangular L whose rows end with the diagonal.
pub fn forward_solve_sparse(l: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = l.nrows();
    if b.len() != n {
        return Err(Error::dims("sparse forward_solve", n, b.len()));
    }
    let mut y = b.to_vec();
    for i in 0..n {
        let (cols, vals) = l.row(i);
        let last = cols.len() - 1;
        debug_assert_eq!(cols[last], i);
        let s: f64 = cols[..last].iter().zip(&vals[..last]).map(|(&k, &v)| v * y[k]).sum();
        y[i] = (y[i] - s) / vals[last];
    }
    Ok(y)
}

/// Solves Lᵀ x = y for a sparse lower-triangular L whose rows end with the diagonal.
pub fn backward_solve_sparse_transposed(l: &SparseMatrix, y: &[f64]) -> Result<Vec<f64>> {
    let n = l.nrows();
    if y.len() != n {
        return Err(Error::dims("sparse backward_solve", n, y.len()));
    }
    let mut x = y.to_vec();
    for i in (0..n).rev() {
        let (cols, vals) = l.row(i);
        let last = cols.len() - 1;
        x[i] /= vals[last];
        let xi = x[i];
        for (&k, &v) in cols[..last].iter().zip(&vals[..last]) {
            x[k] -= v * xi;
        }
    }
    Ok(x)
}
