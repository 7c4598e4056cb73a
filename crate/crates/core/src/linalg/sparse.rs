use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dense::DenseMatrix;

/// Compressed-row sparse matrix.
///
/// Column indices are strictly increasing within each row; duplicate
/// entries are merged at construction time. Explicit zeros are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from raw CSR arrays, checking every structural invariant.
    pub fn new(
        nrows: usize,
        ncols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != nrows + 1 {
            return Err(Error::InvalidStructure(format!(
                "row_offsets has {} entries, expected {}",
                row_offsets.len(),
                nrows + 1
            )));
        }
        if row_offsets[0] != 0 || *row_offsets.last().unwrap() != values.len() {
            return Err(Error::InvalidStructure(
                "row_offsets must start at 0 and end at nnz".into(),
            ));
        }
        if col_indices.len() != values.len() {
            return Err(Error::InvalidStructure(
                "col_indices and values lengths differ".into(),
            ));
        }
        for i in 0..nrows {
            let (start, end) = (row_offsets[i], row_offsets[i + 1]);
            if start > end {
                return Err(Error::InvalidStructure(format!(
                    "row_offsets decrease at row {i}"
                )));
            }
            let cols = &col_indices[start..end];
            for (k, &c) in cols.iter().enumerate() {
                if c >= ncols {
                    return Err(Error::InvalidStructure(format!(
                        "column {c} out of range in row {i}"
                    )));
                }
                if k > 0 && cols[k - 1] >= c {
                    return Err(Error::InvalidStructure(format!(
                        "columns not strictly increasing in row {i}"
                    )));
                }
            }
        }
        Ok(SparseMatrix {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseMatrix {
            nrows,
            ncols,
            row_offsets: vec![0; nrows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![1.0; n])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        SparseMatrix {
            nrows: n,
            ncols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    /// `tridiag(sub, main, sup)` of order n with constant bands; zero bands are not stored.
    pub fn tridiag(n: usize, sub: f64, main: f64, sup: f64) -> Self {
        let mut t = Vec::with_capacity(3 * n);
        for i in 0..n {
            if i > 0 && sub != 0.0 {
                t.push((i, i - 1, sub));
            }
            if main != 0.0 {
                t.push((i, i, main));
            }
            if i + 1 < n && sup != 0.0 {
                t.push((i, i + 1, sup));
            }
        }
        Self::from_triplets(n, n, &t).expect("in-range triplets")
    }

    /// Assembles from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut counts = vec![0usize; nrows + 1];
        for &(i, j, _) in triplets {
            if i >= nrows || j >= ncols {
                return Err(Error::InvalidStructure(format!(
                    "triplet ({i}, {j}) outside {nrows}x{ncols}"
                )));
            }
            counts[i + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        let mut next = counts.clone();
        for &(i, j, v) in triplets {
            cols[next[i]] = j;
            vals[next[i]] = v;
            next[i] += 1;
        }
        let mut row_offsets = Vec::with_capacity(nrows + 1);
        row_offsets.push(0);
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for i in 0..nrows {
            scratch.clear();
            scratch.extend((counts[i]..counts[i + 1]).map(|k| (cols[k], vals[k])));
            scratch.sort_by_key(|e| e.0);
            for &(c, v) in &scratch {
                if col_indices.len() > *row_offsets.last().unwrap() && *col_indices.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_indices.push(c);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Ok(SparseMatrix {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Stores every entry of `d` whose magnitude exceeds `drop_below`.
    pub fn from_dense(d: &DenseMatrix, drop_below: f64) -> Self {
        let mut row_offsets = vec![0];
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        for i in 0..d.nrows() {
            for (j, &v) in d.row(i).iter().enumerate() {
                if v.abs() > drop_below {
                    col_indices.push(j);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        SparseMatrix {
            nrows: d.nrows(),
            ncols: d.ncols(),
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_square(&self) -> bool {
        self.nrows == self.ncols
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row i.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_offsets[i]..self.row_offsets[i + 1];
        (&self.col_indices[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    /// Iterates stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.nrows];
        self.spmv_into(x, &mut y)?;
        Ok(y)
    }

    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        if x.len() != self.ncols {
            return Err(Error::dims("spmv input", self.ncols, x.len()));
        }
        if y.len() != self.nrows {
            return Err(Error::dims("spmv output", self.nrows, y.len()));
        }
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
        Ok(())
    }

    /// y = selfᵀ x without forming the transpose.
    pub fn spmv_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.nrows {
            return Err(Error::dims("spmv_transpose input", self.nrows, x.len()));
        }
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                y[j] += v * xi;
            }
        }
        Ok(y)
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &j in &self.col_indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut col_indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                col_indices[next[j]] = i;
                values[next[j]] = v;
                next[j] += 1;
            }
        }
        SparseMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            row_offsets: counts,
            col_indices,
            values,
        }
    }

    pub fn scaled(&self, alpha: f64) -> SparseMatrix {
        let mut s = self.clone();
        for v in &mut s.values {
            *v *= alpha;
        }
        s
    }

    /// diag(d) * self.
    pub fn scale_rows(&self, d: &[f64]) -> SparseMatrix {
        let mut s = self.clone();
        for (i, &di) in d.iter().enumerate() {
            let r = s.row_offsets[i]..s.row_offsets[i + 1];
            for v in &mut s.values[r] {
                *v *= di;
            }
        }
        s
    }

    /// alpha*self + beta*other.
    pub fn add_scaled(&self, alpha: f64, other: &SparseMatrix, beta: f64) -> Result<SparseMatrix> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::dims("sparse add", self.nrows * self.ncols, other.nrows * other.ncols));
        }
        let mut row_offsets = vec![0];
        let mut col_indices = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.nrows {
            let (ca, va) = self.row(i);
            let (cb, vb) = other.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                let take_a = q >= cb.len() || (p < ca.len() && ca[p] <= cb[q]);
                let take_b = p >= ca.len() || (q < cb.len() && cb[q] <= ca[p]);
                if take_a && take_b {
                    col_indices.push(ca[p]);
                    values.push(alpha * va[p] + beta * vb[q]);
                    p += 1;
                    q += 1;
                } else if take_a {
                    col_indices.push(ca[p]);
                    values.push(alpha * va[p]);
                    p += 1;
                } else {
                    col_indices.push(cb[q]);
                    values.push(beta * vb[q]);
                    q += 1;
                }
            }
            row_offsets.push(col_indices.len());
        }
        Ok(SparseMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn add(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        self.add_scaled(1.0, other, 1.0)
    }

    /// Sparse product self * other (row-wise Gustavson).
    pub fn matmul(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.ncols != other.nrows {
            return Err(Error::dims("sparse matmul", self.ncols, other.nrows));
        }
        let mut acc = vec![0.0; other.ncols];
        let mut marker = vec![usize::MAX; other.ncols];
        let mut pattern: Vec<usize> = Vec::new();
        let mut row_offsets = vec![0];
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        for i in 0..self.nrows {
            pattern.clear();
            let (ca, va) = self.row(i);
            for (&k, &a) in ca.iter().zip(va) {
                let (cb, vb) = other.row(k);
                for (&j, &b) in cb.iter().zip(vb) {
                    if marker[j] != i {
                        marker[j] = i;
                        acc[j] = 0.0;
                        pattern.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            pattern.sort_unstable();
            for &j in &pattern {
                col_indices.push(j);
                values.push(acc[j]);
            }
            row_offsets.push(col_indices.len());
        }
        Ok(SparseMatrix {
            nrows: self.nrows,
            ncols: other.ncols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Kronecker product; (A⊗B)[i·p+k, j·q+l] = A[i,j]·B[k,l].
    pub fn kron(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        let nrows = self
            .nrows
            .checked_mul(other.nrows)
            .ok_or(Error::IndexOverflow { rows: self.nrows, cols: other.nrows })?;
        let ncols = self
            .ncols
            .checked_mul(other.ncols)
            .ok_or(Error::IndexOverflow { rows: self.ncols, cols: other.ncols })?;
        let nnz = self
            .nnz()
            .checked_mul(other.nnz())
            .ok_or(Error::IndexOverflow { rows: nrows, cols: ncols })?;
        let mut row_offsets = Vec::with_capacity(nrows + 1);
        row_offsets.push(0);
        let mut col_indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for i in 0..self.nrows {
            let (ca, va) = self.row(i);
            for k in 0..other.nrows {
                let (cb, vb) = other.row(k);
                for (&j, &a) in ca.iter().zip(va) {
                    for (&l, &b) in cb.iter().zip(vb) {
                        col_indices.push(j * other.ncols + l);
                        values.push(a * b);
                    }
                }
                row_offsets.push(col_indices.len());
            }
        }
        Ok(SparseMatrix {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.iter() {
            d[(i, j)] = v;
        }
        d
    }

    pub fn extract_diag(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// Keeps only entries with |i - j| <= 1.
    pub fn extract_tridiag(&self) -> SparseMatrix {
        self.filter(|i, j, _| i.abs_diff(j) <= 1)
    }

    /// Lower triangle including the diagonal.
    pub fn lower_triangle(&self) -> SparseMatrix {
        self.filter(|i, j, _| j <= i)
    }

    pub fn filter(&self, keep: impl Fn(usize, usize, f64) -> bool) -> SparseMatrix {
        let mut row_offsets = vec![0];
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if keep(i, j, v) {
                    col_indices.push(j);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        SparseMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        crate::linalg::vector::norm2(&self.values)
    }

    /// Euclidean norm of column j, computed via a full scan.
    pub fn column_norms(&self) -> Vec<f64> {
        let mut sq = vec![0.0; self.ncols];
        for (_, j, v) in self.iter() {
            sq[j] += v * v;
        }
        sq.into_iter().map(f64::sqrt).collect()
    }

    /// Largest |A[i,j] - A[j,i]| over stored entries.
    pub fn asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let t = self.transpose();
        match self.add_scaled(1.0, &t, -1.0) {
            Ok(d) => d.max_abs(),
            Err(_) => f64::INFINITY,
        }
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        self.is_square() && self.asymmetry() <= rel_tol * self.max_abs().max(1e-14)
    }

    /// Assembles a block matrix from a grid of optional blocks.
    ///
    /// `row_sizes`/`col_sizes` fix the block dimensions so that `None`
    /// entries stand for zero blocks.
    pub fn from_blocks(
        row_sizes: &[usize],
        col_sizes: &[usize],
        blocks: &[Vec<Option<&SparseMatrix>>],
    ) -> Result<SparseMatrix> {
        let nrows: usize = row_sizes.iter().sum();
        let ncols: usize = col_sizes.iter().sum();
        let col_starts: Vec<usize> = col_sizes
            .iter()
            .scan(0, |acc, &s| {
                let start = *acc;
                *acc += s;
                Some(start)
            })
            .collect();
        let mut row_offsets = vec![0];
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        for (bi, &rs) in row_sizes.iter().enumerate() {
            for (bj, blk) in blocks[bi].iter().enumerate() {
                if let Some(b) = blk {
                    if b.nrows != rs || b.ncols != col_sizes[bj] {
                        return Err(Error::InvalidStructure(format!(
                            "block ({bi},{bj}) is {}x{}, expected {}x{}",
                            b.nrows, b.ncols, rs, col_sizes[bj]
                        )));
                    }
                }
            }
            for r in 0..rs {
                for (bj, blk) in blocks[bi].iter().enumerate() {
                    if let Some(b) = blk {
                        let (cols, vals) = b.row(r);
                        col_indices.extend(cols.iter().map(|&c| c + col_starts[bj]));
                        values.extend_from_slice(vals);
                    }
                }
                row_offsets.push(col_indices.len());
            }
        }
        Ok(SparseMatrix {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn block_diag(blocks: &[&SparseMatrix]) -> Result<SparseMatrix> {
        let rows: Vec<usize> = blocks.iter().map(|b| b.nrows).collect();
        let cols: Vec<usize> = blocks.iter().map(|b| b.ncols).collect();
        let grid: Vec<Vec<Option<&SparseMatrix>>> = (0..blocks.len())
            .map(|i| (0..blocks.len()).map(|j| (i == j).then_some(blocks[i])).collect())
            .collect();
        Self::from_blocks(&rows, &cols, &grid)
    }
}
