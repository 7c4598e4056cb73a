use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    nrows: usize,
    ncols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        DenseMatrix {
            nrows,
            ncols,
            values: vec![0.0; nrows * ncols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(nrows: usize, ncols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != nrows * ncols {
            return Err(Error::dims("DenseMatrix::from_row_major", nrows * ncols, values.len()));
        }
        Ok(DenseMatrix {
            nrows,
            ncols,
            values,
        })
    }

    /// Builds a matrix from nested rows; panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut values = Vec::with_capacity(nrows * ncols);
        for r in rows {
            assert_eq!(r.len(), ncols, "ragged rows");
            values.extend_from_slice(r);
        }
        DenseMatrix {
            nrows,
            ncols,
            values,
        }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn is_square(&self) -> bool {
        self.nrows == self.ncols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.nrows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, col: &[f64]) {
        for (i, &v) in col.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = Self::zeros(self.ncols, self.nrows);
        for i in 0..self.nrows {
            for j in 0..self.ncols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols {
            return Err(Error::dims("DenseMatrix::matvec", self.ncols, x.len()));
        }
        Ok((0..self.nrows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.ncols != other.nrows {
            return Err(Error::dims("DenseMatrix::matmul", self.ncols, other.nrows));
        }
        let mut out = Self::zeros(self.nrows, other.ncols);
        for i in 0..self.nrows {
            let orow = &mut out.values[i * other.ncols..(i + 1) * other.ncols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in orow.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// self * otherᵀ, handy for Gram-type products.
    pub fn matmul_transpose(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.ncols != other.ncols {
            return Err(Error::dims("DenseMatrix::matmul_transpose", self.ncols, other.ncols));
        }
        let mut out = Self::zeros(self.nrows, other.nrows);
        for i in 0..self.nrows {
            let ri = self.row(i);
            for j in 0..other.nrows {
                out[(i, j)] = ri.iter().zip(other.row(j)).map(|(a, b)| a * b).sum();
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> Result<DenseMatrix> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::dims(
                "DenseMatrix elementwise",
                self.nrows * self.ncols,
                other.nrows * other.ncols,
            ));
        }
        Ok(DenseMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scaled(&self, alpha: f64) -> DenseMatrix {
        DenseMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            values: self.values.iter().map(|v| alpha * v).collect(),
        }
    }

    pub fn add_identity(&mut self, sigma: f64) {
        for i in 0..self.nrows.min(self.ncols) {
            self[(i, i)] += sigma;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        crate::linalg::vector::norm2(&self.values)
    }

    /// Largest |A[i,j] - A[j,i]|.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.nrows {
            for j in (i + 1)..self.ncols.min(self.nrows) {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        self.is_square() && self.asymmetry() <= rel_tol * self.max_abs().max(1e-14)
    }

    /// (A + Aᵀ)/2.
    pub fn symmetrized(&self) -> DenseMatrix {
        let mut s = self.clone();
        for i in 0..self.nrows {
            for j in (i + 1)..self.ncols {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        s
    }

    /// Copies `block` into self with its top-left corner at (r0, c0).
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &DenseMatrix) {
        for i in 0..block.nrows {
            let dst = &mut self.values[(r0 + i) * self.ncols + c0..(r0 + i) * self.ncols + c0 + block.ncols];
            dst.copy_from_slice(block.row(i));
        }
    }

    pub fn block(&self, r0: usize, c0: usize, nrows: usize, ncols: usize) -> DenseMatrix {
        let mut out = Self::zeros(nrows, ncols);
        for i in 0..nrows {
            out.row_mut(i)
                .copy_from_slice(&self.values[(r0 + i) * self.ncols + c0..(r0 + i) * self.ncols + c0 + ncols]);
        }
        out
    }

    /// Scales row i by d[i] (i.e. diag(d) * self).
    pub fn scale_rows(&mut self, d: &[f64]) {
        for (i, &di) in d.iter().enumerate() {
            for v in self.row_mut(i) {
                *v *= di;
            }
        }
    }

    /// Scales column j by d[j] (i.e. self * diag(d)).
    pub fn scale_cols(&mut self, d: &[f64]) {
        let ncols = self.ncols;
        for row in self.values.chunks_mut(ncols.max(1)) {
            for (v, &dj) in row.iter_mut().zip(d) {
                *v *= dj;
            }
        }
    }

    /// Spectral norm via the largest eigenvalue of AᵀA.
    pub fn norm2(&self) -> Result<f64> {
        let gram = if self.nrows <= self.ncols {
            self.matmul_transpose(self)?
        } else {
            self.transpose().matmul_transpose(&self.transpose())?
        };
        let eig = crate::linalg::eigen::symmetric_eigenvalues(&gram)?;
        Ok(eig.last().copied().unwrap_or(0.0).max(0.0).sqrt())
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.values[i * self.ncols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.values[i * self.ncols + j]
    }
}
