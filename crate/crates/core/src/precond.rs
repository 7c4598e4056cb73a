//! The eight inexact block factorization preconditioners.
//!
//! Every preconditioner has the factored form M = L_M·D_M·U_M with
//!
//! ```text
//! L_M = [ I      0       0 ]   D_M = diag(M_A, −Ŝ, M̂_S)   U_M = [ I  Z_A·Bᵀ   0       ]
//!       [ B·Y_A  I       0 ]                               [ 0  I       −W_S·Cᵀ ]
//!       [ 0      −C·W_S  I ]                               [ 0  0        I      ]
//! ```
//!
//! where each of Y_A, Z_A is either 0 or M_A⁻¹ and W_S is either 0 or Ŝ⁻¹.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::{
    factor_dense, factor_spd, ichol_droptol, CholFactor, FactorStrategy, DEFAULT_DENSE_THRESHOLD,
};
use crate::linalg::dense::DenseMatrix;
use crate::linalg::sparse::SparseMatrix;
use crate::linalg::vector::axpy;
use crate::system::BlockSystem;

/// Which preconditioner of the family to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreconKind {
    D,
    Ut,
    Lt,
    F1,
    F2,
    F3,
    F4,
    F5,
}

/// Whether each of Y_A, Z_A and W_S is switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub y_a: bool,
    pub z_a: bool,
    pub w_s: bool,
}

impl PreconKind {
    pub const ALL: [PreconKind; 8] = [
        PreconKind::D,
        PreconKind::Ut,
        PreconKind::Lt,
        PreconKind::F1,
        PreconKind::F2,
        PreconKind::F3,
        PreconKind::F4,
        PreconKind::F5,
    ];

    pub fn selection(self) -> Selection {
        let (y_a, z_a, w_s) = match self {
            PreconKind::D => (false, false, false),
            PreconKind::Ut => (false, true, false),
            PreconKind::Lt => (true, false, false),
            PreconKind::F1 => (true, true, false),
            PreconKind::F2 => (false, false, true),
            PreconKind::F3 => (false, true, true),
            PreconKind::F4 => (true, false, true),
            PreconKind::F5 => (true, true, true),
        };
        Selection { y_a, z_a, w_s }
    }

    pub fn name(self) -> &'static str {
        match self {
            PreconKind::D => "d",
            PreconKind::Ut => "ut",
            PreconKind::Lt => "lt",
            PreconKind::F1 => "f1",
            PreconKind::F2 => "f2",
            PreconKind::F3 => "f3",
            PreconKind::F4 => "f4",
            PreconKind::F5 => "f5",
        }
    }
}

impl fmt::Display for PreconKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PreconKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PreconKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown preconditioner kind '{s}'")))
    }
}

/// Parses a comma-separated list of kinds; "all" expands to every kind.
pub fn parse_kinds(s: &str) -> Result<Vec<PreconKind>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(PreconKind::ALL.to_vec());
    }
    s.split(',').map(|t| t.trim().parse()).collect()
}

/// How the approximations M_A, Ŝ, M̂_S are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Recipe {
    /// M_A = A, Ŝ = BBᵀ, M̂_S = CŜ⁻¹Cᵀ.
    Ex61,
    /// M_A = LLᵀ (incomplete Cholesky), Ŝ = diag(BM_A⁻¹Bᵀ), M̂_S = CŜ⁻¹Cᵀ.
    Ex62,
    /// M_A = A, Ŝ = BM_A⁻¹Bᵀ + 0.1·I, M̂_S = D + CŜ⁻¹Cᵀ.
    Ex63,
    /// M_A = A, Ŝ = BM_A⁻¹Bᵀ + 0.01·diag(BM_A⁻¹Bᵀ), M̂_S = D + CŜ⁻¹Cᵀ.
    Ex64,
    /// M_A = LLᵀ (incomplete Cholesky), Ŝ = tridiag(BM_A⁻¹Bᵀ), M̂_S = D + CŜ⁻¹Cᵀ.
    Ex65,
    /// M_A = A, Ŝ = BA⁻¹Bᵀ, M̂_S = D + CS⁻¹Cᵀ.
    Exact,
    /// User-supplied matrices.
    Custom,
}

impl Recipe {
    pub fn name(self) -> &'static str {
        match self {
            Recipe::Ex61 => "ex61",
            Recipe::Ex62 => "ex62",
            Recipe::Ex63 => "ex63",
            Recipe::Ex64 => "ex64",
            Recipe::Ex65 => "ex65",
            Recipe::Exact => "exact",
            Recipe::Custom => "custom",
        }
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Recipe {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [
            Recipe::Ex61,
            Recipe::Ex62,
            Recipe::Ex63,
            Recipe::Ex64,
            Recipe::Ex65,
            Recipe::Exact,
            Recipe::Custom,
        ]
        .into_iter()
        .find(|r| r.name().eq_ignore_ascii_case(s))
        .ok_or_else(|| Error::InvalidArgument(format!("unknown recipe '{s}'")))
    }
}

/// Options for [`ApproxBlocks::build`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub dense_threshold: usize,
    /// Drop tolerance of the incomplete Cholesky factor in recipes that use one.
    pub droptol: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            dense_threshold: DEFAULT_DENSE_THRESHOLD,
            droptol: 1e-8,
        }
    }
}

/// An approximation matrix kept in whichever storage it was formed in.
#[derive(Debug, Clone)]
pub enum Assembled {
    Sparse(SparseMatrix),
    Dense(DenseMatrix),
}

impl Assembled {
    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            Assembled::Sparse(s) => s.to_dense(),
            Assembled::Dense(d) => d.clone(),
        }
    }

    pub fn order(&self) -> usize {
        match self {
            Assembled::Sparse(s) => s.nrows(),
            Assembled::Dense(d) => d.nrows(),
        }
    }
}

/// Factored approximations M_A ≈ A, Ŝ ≈ S and M̂_S ≈ M_S.
#[derive(Debug, Clone)]
pub struct ApproxBlocks {
    pub recipe: Recipe,
    pub m_a: CholFactor,
    pub s_hat: CholFactor,
    pub s_hat_matrix: Assembled,
    pub ms_hat: CholFactor,
    pub ms_hat_matrix: Assembled,
    pub notes: Vec<String>,
}

impl ApproxBlocks {
    pub fn build(sys: &BlockSystem, recipe: Recipe) -> Result<Self> {
        Self::build_with(sys, recipe, BuildOptions::default())
    }

    pub fn build_with(sys: &BlockSystem, recipe: Recipe, opts: BuildOptions) -> Result<Self> {
        let (n, m, l) = sys.dims();
        let thr = opts.dense_threshold;
        let mut notes = Vec::new();
        let exact_a = || factor_spd(sys.a(), FactorStrategy::Exact, thr);
        let (m_a, s_hat_matrix) = match recipe {
            Recipe::Ex61 => (exact_a()?, Assembled::Sparse(sys.b().matmul(sys.bt())?)),
            Recipe::Ex62 | Recipe::Ex65 => {
                let ma = ichol_droptol(sys.a(), opts.droptol)?;
                notes.push(format!("M_A from incomplete Cholesky, droptol {:e}, nnz(L) = {}", opts.droptol, ma.nnz()));
                let s = if recipe == Recipe::Ex62 {
                    let d = schur_band(&ma, sys.b(), false)?;
                    SparseMatrix::from_diag(&d.0)
                } else {
                    let (d, off) = schur_band(&ma, sys.b(), true)?;
                    tridiag_from(&d, &off)
                };
                (ma, Assembled::Sparse(s))
            }
            Recipe::Ex63 | Recipe::Ex64 | Recipe::Exact => {
                if n.max(m) > thr {
                    return Err(Error::NotSupported(format!(
                        "recipe {recipe} needs a dense Schur complement; n = {n}, m = {m} exceed the dense threshold {thr}"
                    )));
                }
                let ma = exact_a()?;
                let mut s = schur_dense(&ma, sys.bt())?;
                match recipe {
                    Recipe::Ex63 => s.add_identity(0.1),
                    Recipe::Ex64 => {
                        let d = s.diag();
                        for (i, di) in d.into_iter().enumerate() {
                            s[(i, i)] += 0.01 * di;
                        }
                    }
                    _ => {}
                }
                (ma, Assembled::Dense(s))
            }
            Recipe::Custom => {
                return Err(Error::InvalidArgument(
                    "custom blocks are built with ApproxBlocks::from_matrices".into(),
                ))
            }
        };
        let s_hat = factor_assembled(&s_hat_matrix, thr)?;

        // M̂_S = (D +) C Ŝ⁻¹ Cᵀ
        let include_d = !matches!(recipe, Recipe::Ex61 | Recipe::Ex62);
        let ms_hat_matrix = match &s_hat_matrix {
            Assembled::Sparse(s) if is_diagonal(s) => {
                let inv: Vec<f64> = s.extract_diag().iter().map(|v| 1.0 / v).collect();
                let cs = sys.c().scale_cols_sparse(&inv);
                let mut ms = cs.matmul(sys.ct())?;
                if include_d {
                    ms = ms.add(sys.d())?;
                }
                Assembled::Sparse(ms)
            }
            _ => {
                if m.max(l) > thr {
                    return Err(Error::NotSupported(format!(
                        "recipe {recipe} needs a dense C·Ŝ⁻¹·Cᵀ; m = {m}, l = {l} exceed the dense threshold {thr}"
                    )));
                }
                let mut ms = schur_dense(&s_hat, sys.ct())?;
                if include_d {
                    ms = ms.add(&sys.d().to_dense())?;
                }
                Assembled::Dense(ms)
            }
        };
        let ms_hat = factor_assembled(&ms_hat_matrix, thr)?;
        Ok(ApproxBlocks {
            recipe,
            m_a,
            s_hat,
            s_hat_matrix,
            ms_hat,
            ms_hat_matrix,
            notes,
        })
    }

    /// Blocks from explicit SPD matrices.
    pub fn from_matrices(m_a: &DenseMatrix, s_hat: &DenseMatrix, ms_hat: &DenseMatrix) -> Result<Self> {
        Ok(ApproxBlocks {
            recipe: Recipe::Custom,
            m_a: factor_dense(m_a)?,
            s_hat: factor_dense(s_hat)?,
            s_hat_matrix: Assembled::Dense(s_hat.clone()),
            ms_hat: factor_dense(ms_hat)?,
            ms_hat_matrix: Assembled::Dense(ms_hat.clone()),
            notes: Vec::new(),
        })
    }

    /// Blocks from sparse SPD matrices, factored with the given threshold.
    pub fn from_sparse_matrices(
        m_a: &SparseMatrix,
        s_hat: &SparseMatrix,
        ms_hat: &SparseMatrix,
        dense_threshold: usize,
    ) -> Result<Self> {
        Ok(ApproxBlocks {
            recipe: Recipe::Custom,
            m_a: factor_spd(m_a, FactorStrategy::Exact, dense_threshold)?,
            s_hat: factor_spd(s_hat, FactorStrategy::Exact, dense_threshold)?,
            s_hat_matrix: Assembled::Sparse(s_hat.clone()),
            ms_hat: factor_spd(ms_hat, FactorStrategy::Exact, dense_threshold)?,
            ms_hat_matrix: Assembled::Sparse(ms_hat.clone()),
            notes: Vec::new(),
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.m_a.order(), self.s_hat.order(), self.ms_hat.order())
    }
}

fn factor_assembled(a: &Assembled, thr: usize) -> Result<CholFactor> {
    match a {
        Assembled::Sparse(s) if is_diagonal(s) => CholFactor::from_positive_diag(&s.extract_diag()),
        Assembled::Sparse(s) => factor_spd(s, FactorStrategy::Exact, thr),
        Assembled::Dense(d) => factor_dense(d),
    }
}

fn is_diagonal(s: &SparseMatrix) -> bool {
    s.iter().all(|(i, j, _)| i == j)
}

fn tridiag_from(d: &[f64], off: &[f64]) -> SparseMatrix {
    let mut t = Vec::with_capacity(3 * d.len());
    for (i, &v) in d.iter().enumerate() {
        t.push((i, i, v));
        if let Some(&o) = off.get(i) {
            t.push((i, i + 1, o));
            t.push((i + 1, i, o));
        }
    }
    SparseMatrix::from_triplets(d.len(), d.len(), &t).expect("indices in range")
}

/// X·(LLᵀ)⁻¹·Xᵀ for X = Mᵀ given as the sparse matrix `mt` (columns are the rows of X).
pub fn schur_dense(f: &CholFactor, mt: &SparseMatrix) -> Result<DenseMatrix> {
    let y = f.forward_solve_block(&mt.to_dense())?;
    let yt = y.transpose();
    yt.matmul_transpose(&yt)
}

/// Diagonal (and optionally first off-diagonal) of B·(LLᵀ)⁻¹·Bᵀ via one
/// triangular solve per row of B.
pub fn schur_band(f: &CholFactor, b: &SparseMatrix, with_offdiag: bool) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = b.ncols();
    let m = b.nrows();
    let mut diag = Vec::with_capacity(m);
    let mut off = Vec::with_capacity(m.saturating_sub(1));
    let mut prev: Option<Vec<f64>> = None;
    let mut rhs = vec![0.0; n];
    for i in 0..m {
        rhs.iter_mut().for_each(|v| *v = 0.0);
        let (cols, vals) = b.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            rhs[j] = v;
        }
        let v = f.forward_solve(&rhs)?;
        diag.push(v.iter().map(|t| t * t).sum());
        if with_offdiag {
            if let Some(p) = &prev {
                off.push(p.iter().zip(&v).map(|(a, b)| a * b).sum());
            }
            prev = Some(v);
        }
    }
    Ok((diag, off))
}

trait ScaleCols {
    fn scale_cols_sparse(&self, d: &[f64]) -> SparseMatrix;
}

impl ScaleCols for SparseMatrix {
    fn scale_cols_sparse(&self, d: &[f64]) -> SparseMatrix {
        self.transpose().scale_rows(d).transpose()
    }
}

/// A preconditioner of one kind bound to a system and its approximation blocks.
#[derive(Debug, Clone, Copy)]
pub struct BlockPreconditioner<'a> {
    kind: PreconKind,
    blocks: &'a ApproxBlocks,
    sys: &'a BlockSystem,
}

impl<'a> BlockPreconditioner<'a> {
    pub fn new(kind: PreconKind, blocks: &'a ApproxBlocks, sys: &'a BlockSystem) -> Result<Self> {
        if blocks.dims() != sys.dims() {
            let (n, m, l) = sys.dims();
            let (bn, bm, bl) = blocks.dims();
            return Err(Error::dims("approximation blocks vs system", n + m + l, bn + bm + bl));
        }
        Ok(BlockPreconditioner { kind, blocks, sys })
    }

    pub fn kind(&self) -> PreconKind {
        self.kind
    }

    pub fn blocks(&self) -> &ApproxBlocks {
        self.blocks
    }

    pub fn order(&self) -> usize {
        self.sys.order()
    }

    /// M⁻¹·r by forward, diagonal and backward block substitution.
    pub fn apply_inverse(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.order() {
            return Err(Error::dims("apply_inverse", self.order(), r.len()));
        }
        let sel = self.kind.selection();
        let (r1, r2, r3) = self.sys.split(r);
        let bl = self.blocks;

        let s1 = bl.m_a.solve(r1)?;
        let mut t2 = r2.to_vec();
        if sel.y_a {
            axpy(-1.0, &self.sys.b().spmv(&s1)?, &mut t2);
        }
        let w = bl.s_hat.solve(&t2)?;
        let mut t3 = r3.to_vec();
        if sel.w_s {
            axpy(1.0, &self.sys.c().spmv(&w)?, &mut t3);
        }
        let z3 = bl.ms_hat.solve(&t3)?;
        let mut z2: Vec<f64> = w.iter().map(|v| -v).collect();
        if sel.w_s {
            let q = bl.s_hat.solve(&self.sys.ct().spmv(&z3)?)?;
            axpy(1.0, &q, &mut z2);
        }
        let mut z1 = s1;
        if sel.z_a {
            let q = bl.m_a.solve(&self.sys.bt().spmv(&z2)?)?;
            axpy(-1.0, &q, &mut z1);
        }
        let mut out = z1;
        out.extend_from_slice(&z2);
        out.extend_from_slice(&z3);
        Ok(out)
    }

    /// M·u from the factored form.
    pub fn apply_forward(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.order() {
            return Err(Error::dims("apply_forward", self.order(), u.len()));
        }
        let sel = self.kind.selection();
        let (u1, u2, u3) = self.sys.split(u);
        let bl = self.blocks;

        // v = U·u
        let mut v1 = u1.to_vec();
        if sel.z_a {
            axpy(1.0, &bl.m_a.solve(&self.sys.bt().spmv(u2)?)?, &mut v1);
        }
        let mut v2 = u2.to_vec();
        if sel.w_s {
            axpy(-1.0, &bl.s_hat.solve(&self.sys.ct().spmv(u3)?)?, &mut v2);
        }
        // w = D·v
        let w1 = bl.m_a.apply(&v1)?;
        let w2: Vec<f64> = bl.s_hat.apply(&v2)?.iter().map(|x| -x).collect();
        let w3 = bl.ms_hat.apply(u3)?;
        // out = L·w
        let mut o2 = w2.clone();
        if sel.y_a {
            axpy(1.0, &self.sys.b().spmv(&bl.m_a.solve(&w1)?)?, &mut o2);
        }
        let mut o3 = w3;
        if sel.w_s {
            axpy(-1.0, &self.sys.c().spmv(&bl.s_hat.solve(&w2)?)?, &mut o3);
        }
        let mut out = w1;
        out.extend_from_slice(&o2);
        out.extend_from_slice(&o3);
        Ok(out)
    }

    /// Dense M, column by column.
    pub fn materialize_dense(&self) -> Result<DenseMatrix> {
        self.dense_by_columns(|e| self.apply_forward(e))
    }

    /// Dense M⁻¹K, column by column.
    pub fn preconditioned_dense(&self) -> Result<DenseMatrix> {
        self.dense_by_columns(|e| self.apply_inverse(&self.sys.apply(e)?))
    }

    fn dense_by_columns(&self, f: impl Fn(&[f64]) -> Result<Vec<f64>>) -> Result<DenseMatrix> {
        let n = self.order();
        let mut out = DenseMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = f(&e)?;
            out.set_column(j, &col);
            e[j] = 0.0;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{random_valid, stokes_modified};

    fn tiny() -> BlockSystem {
        let a = SparseMatrix::identity(2);
        let b = SparseMatrix::from_triplets(1, 2, &[(0, 0, 1.0)]).unwrap();
        let c = SparseMatrix::identity(1);
        let d = SparseMatrix::identity(1);
        BlockSystem::with_unit_solution(a, b, c, d).unwrap()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-300);
        num / den
    }

    #[test]
    fn parse_kinds_and_recipes() {
        assert_eq!(parse_kinds("d,F5").unwrap(), vec![PreconKind::D, PreconKind::F5]);
        assert_eq!(parse_kinds("all").unwrap().len(), 8);
        assert!(parse_kinds("f6").is_err());
        assert_eq!("EX62".parse::<Recipe>().unwrap(), Recipe::Ex62);
    }

    #[test]
    fn tiny_exact_blocks_by_hand() {
        let s = tiny();
        let bl = ApproxBlocks::build(&s, Recipe::Exact).unwrap();
        assert_eq!(bl.s_hat_matrix.to_dense()[(0, 0)], 1.0);
        assert_eq!(bl.ms_hat_matrix.to_dense()[(0, 0)], 2.0);
        let p = BlockPreconditioner::new(PreconKind::D, &bl, &s).unwrap();
        let z = p.apply_inverse(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        for (zi, ei) in z.iter().zip([1.0, 1.0, -1.0, 0.5]) {
            assert!((zi - ei).abs() < 1e-15);
        }
    }

    #[test]
    fn ex61_schur_is_bbt() {
        let s = stokes_modified(2).unwrap();
        let bl = ApproxBlocks::build(&s, Recipe::Ex61).unwrap();
        let bbt = s.b().to_dense().matmul_transpose(&s.b().to_dense()).unwrap();
        assert_eq!(bl.s_hat_matrix.to_dense(), bbt);
    }

    #[test]
    fn exact_above_threshold_not_supported() {
        let s = stokes_modified(4).unwrap();
        let opts = BuildOptions {
            dense_threshold: 10,
            ..Default::default()
        };
        assert!(matches!(ApproxBlocks::build_with(&s, Recipe::Exact, opts), Err(Error::NotSupported(_))));
    }

    #[test]
    fn exact_f5_reproduces_k() {
        let s = random_valid(9, 5, 3, 11).unwrap();
        let bl = ApproxBlocks::build(&s, Recipe::Exact).unwrap();
        let p = BlockPreconditioner::new(PreconKind::F5, &bl, &s).unwrap();
        let m = p.materialize_dense().unwrap();
        let k = s.assemble_monolithic().to_dense();
        assert!(m.sub(&k).unwrap().max_abs() <= 1e-12 * k.max_abs());
        let u: Vec<f64> = (0..s.order()).map(|i| (i as f64 * 0.37).sin()).collect();
        let back = p.apply_inverse(&s.apply(&u).unwrap()).unwrap();
        assert!(rel_err(&back, &u) < 1e-10);
    }

    #[test]
    fn inverse_and_forward_are_inverse_for_all_kinds() {
        for seed in 0..10 {
            let s = random_valid(10, 6, 4, seed).unwrap();
            let bl = ApproxBlocks::build(&s, Recipe::Ex63).unwrap();
            for kind in PreconKind::ALL {
                let p = BlockPreconditioner::new(kind, &bl, &s).unwrap();
                let r: Vec<f64> = (0..s.order()).map(|i| ((i + 3) as f64).cos()).collect();
                let z = p.apply_inverse(&r).unwrap();
                let back = p.materialize_dense().unwrap().matvec(&z).unwrap();
                assert!(rel_err(&back, &r) < 1e-10, "seed {seed} kind {kind}");
            }
        }
    }

    #[test]
    fn diag_recipes_build() {
        let s = stokes_modified(3).unwrap();
        for recipe in [Recipe::Ex62, Recipe::Ex64, Recipe::Ex61] {
            let bl = ApproxBlocks::build(&s, recipe).unwrap();
            assert_eq!(bl.dims(), s.dims());
        }
        let bl = ApproxBlocks::build(&s, Recipe::Ex62).unwrap();
        // ichol of A at 1e-8 is exact here, so the diagonal matches the exact Schur diagonal
        let exact = ApproxBlocks::build(&s, Recipe::Exact).unwrap();
        let d1 = bl.s_hat_matrix.to_dense().diag();
        let d2 = exact.s_hat_matrix.to_dense().diag();
        assert!(rel_err(&d1, &d2) < 1e-8);
    }

    #[test]
    fn kind_d_preconditioner_is_symmetric() {
        let s = random_valid(8, 4, 3, 5).unwrap();
        let bl = ApproxBlocks::build(&s, Recipe::Ex63).unwrap();
        let m = BlockPreconditioner::new(PreconKind::D, &bl, &s).unwrap().materialize_dense().unwrap();
        assert!(m.asymmetry() <= 1e-12 * m.max_abs());
    }
}
