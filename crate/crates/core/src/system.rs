//! Three-by-three block saddle-point systems.
//!
//! The standard layout is
//!
//! ```text
//!     [ A  Bᵀ 0  ] [x]   [f]
//!     [ B  0  Cᵀ ] [y] = [g]
//!     [ 0  C  D  ] [z]   [h]
//! ```
//!
//! and the equivalent "hat" layout orders the unknowns as (x, z, y):
//!
//! ```text
//!     [ A   0   Bᵀ ] [x]   [ f]
//!     [ 0   D   C  ] [z] = [ h]
//!     [ -B  -Cᵀ 0  ] [y]   [-g]
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::{ichol_droptol, DEFAULT_DENSE_THRESHOLD};
use crate::linalg::cholesky::dense_cholesky;
use crate::linalg::eigen::symmetric_eigenvalues;
use crate::linalg::qr::numerical_rank;
use crate::linalg::sparse::SparseMatrix;
use crate::linalg::vector::{norm2, Vector};

/// Blocks and right-hand side of a standard-layout system.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    a: SparseMatrix,
    b: SparseMatrix,
    c: SparseMatrix,
    d: SparseMatrix,
    bt: SparseMatrix,
    ct: SparseMatrix,
    f: Vector,
    g: Vector,
    h: Vector,
}

fn check_shapes(a: &SparseMatrix, b: &SparseMatrix, c: &SparseMatrix, d: &SparseMatrix) -> Result<(usize, usize, usize)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::dims("A columns", n, a.ncols()));
    }
    let m = b.nrows();
    if b.ncols() != n {
        return Err(Error::dims("B columns", n, b.ncols()));
    }
    let l = c.nrows();
    if c.ncols() != m {
        return Err(Error::dims("C columns", m, c.ncols()));
    }
    if d.nrows() != l || d.ncols() != l {
        return Err(Error::dims("D order", l, d.nrows().max(d.ncols())));
    }
    Ok((n, m, l))
}

impl BlockSystem {
    pub fn new(
        a: SparseMatrix,
        b: SparseMatrix,
        c: SparseMatrix,
        d: SparseMatrix,
        f: Vector,
        g: Vector,
        h: Vector,
    ) -> Result<Self> {
        let (n, m, l) = check_shapes(&a, &b, &c, &d)?;
        if f.len() != n {
            return Err(Error::dims("f length", n, f.len()));
        }
        if g.len() != m {
            return Err(Error::dims("g length", m, g.len()));
        }
        if h.len() != l {
            return Err(Error::dims("h length", l, h.len()));
        }
        let bt = b.transpose();
        let ct = c.transpose();
        Ok(BlockSystem {
            a,
            b,
            c,
            d,
            bt,
            ct,
            f,
            g,
            h,
        })
    }

    /// System whose right-hand side is K·𝟙, so that the exact solution is all ones.
    pub fn with_unit_solution(a: SparseMatrix, b: SparseMatrix, c: SparseMatrix, d: SparseMatrix) -> Result<Self> {
        let (n, m, l) = check_shapes(&a, &b, &c, &d)?;
        let mut sys = Self::new(a, b, c, d, Vector::zeros(n), Vector::zeros(m), Vector::zeros(l))?;
        let rhs = sys.apply(&vec![1.0; n + m + l])?;
        sys.set_rhs(&rhs)?;
        Ok(sys)
    }

    pub fn a(&self) -> &SparseMatrix {
        &self.a
    }
    pub fn b(&self) -> &SparseMatrix {
        &self.b
    }
    pub fn c(&self) -> &SparseMatrix {
        &self.c
    }
    pub fn d(&self) -> &SparseMatrix {
        &self.d
    }
    pub fn bt(&self) -> &SparseMatrix {
        &self.bt
    }
    pub fn ct(&self) -> &SparseMatrix {
        &self.ct
    }
    pub fn f(&self) -> &Vector {
        &self.f
    }
    pub fn g(&self) -> &Vector {
        &self.g
    }
    pub fn h(&self) -> &Vector {
        &self.h
    }

    /// (n, m, l).
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.a.nrows(), self.b.nrows(), self.c.nrows())
    }

    pub fn order(&self) -> usize {
        let (n, m, l) = self.dims();
        n + m + l
    }

    /// Stacked right-hand side (f, g, h).
    pub fn rhs(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.order());
        v.extend_from_slice(&self.f);
        v.extend_from_slice(&self.g);
        v.extend_from_slice(&self.h);
        v
    }

    /// Replaces the right-hand side by a stacked vector (f, g, h).
    pub fn set_rhs(&mut self, rhs: &[f64]) -> Result<()> {
        let (n, m, _) = self.dims();
        if rhs.len() != self.order() {
            return Err(Error::dims("right-hand side", self.order(), rhs.len()));
        }
        self.f = Vector::new(rhs[..n].to_vec())?;
        self.g = Vector::new(rhs[n..n + m].to_vec())?;
        self.h = Vector::new(rhs[n + m..].to_vec())?;
        Ok(())
    }

    /// Splits a stacked vector into its (x, y, z) parts.
    pub fn split<'v>(&self, u: &'v [f64]) -> (&'v [f64], &'v [f64], &'v [f64]) {
        let (n, m, _) = self.dims();
        let (x, rest) = u.split_at(n);
        let (y, z) = rest.split_at(m);
        (x, y, z)
    }

    /// K·u without assembling K.
    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.order() {
            return Err(Error::dims("BlockSystem::apply", self.order(), u.len()));
        }
        let mut out = vec![0.0; u.len()];
        self.apply_into(u, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        let (n, m, _) = self.dims();
        let (x, y, z) = self.split(u);
        let (o1, rest) = out.split_at_mut(n);
        let (o2, o3) = rest.split_at_mut(m);
        self.a.spmv_into(x, o1)?;
        add_spmv(&self.bt, y, o1)?;
        self.b.spmv_into(x, o2)?;
        add_spmv(&self.ct, z, o2)?;
        self.c.spmv_into(y, o3)?;
        add_spmv(&self.d, z, o3)?;
        Ok(())
    }

    /// The monolithic matrix [[A,Bᵀ,0],[B,0,Cᵀ],[0,C,D]].
    pub fn assemble_monolithic(&self) -> SparseMatrix {
        let (n, m, l) = self.dims();
        SparseMatrix::from_blocks(
            &[n, m, l],
            &[n, m, l],
            &[
                vec![Some(&self.a), Some(&self.bt), None],
                vec![Some(&self.b), None, Some(&self.ct)],
                vec![None, Some(&self.c), Some(&self.d)],
            ],
        )
        .expect("block shapes checked at construction")
    }

    /// ‖b − K·(x, y, z)‖₂.
    pub fn residual(&self, x: &[f64], y: &[f64], z: &[f64]) -> Result<f64> {
        let mut u = Vec::with_capacity(self.order());
        u.extend_from_slice(x);
        u.extend_from_slice(y);
        u.extend_from_slice(z);
        let ku = self.apply(&u)?;
        let r: Vec<f64> = self.rhs().iter().zip(&ku).map(|(b, k)| b - k).collect();
        Ok(norm2(&r))
    }

    /// The same system in hat layout.
    pub fn to_hat(&self) -> HatBlockSystem {
        let mut rhs = Vec::with_capacity(self.order());
        rhs.extend_from_slice(&self.f);
        rhs.extend_from_slice(&self.h);
        rhs.extend(self.g.iter().map(|v| -v));
        HatBlockSystem {
            a: self.a.clone(),
            b: self.b.clone(),
            c: self.c.clone(),
            d: self.d.clone(),
            rhs: Vector::new(rhs).expect("finite by construction"),
        }
    }

    /// Checks the structural assumptions on the blocks.
    pub fn validate(&self) -> ValidationReport {
        self.validate_with_threshold(DEFAULT_DENSE_THRESHOLD)
    }

    pub fn validate_with_threshold(&self, dense_threshold: usize) -> ValidationReport {
        let (n, m, l) = self.dims();
        let mut rep = ValidationReport {
            n,
            m,
            l,
            ..Default::default()
        };
        let asym_a = self.a.asymmetry();
        rep.a_symmetric = asym_a <= 1e-12 * self.a.max_abs().max(1e-14);
        let asym_d = self.d.asymmetry();
        rep.d_symmetric = asym_d <= 1e-12 * self.d.max_abs().max(1e-14);
        rep.m_le_n = m <= n;
        if !rep.a_symmetric {
            rep.failures.push(format!("A is not symmetric (asymmetry {asym_a:e})"));
        }
        if !rep.d_symmetric {
            rep.failures.push(format!("D is not symmetric (asymmetry {asym_d:e})"));
        }
        if !rep.m_le_n {
            rep.failures.push(format!("m = {m} exceeds n = {n}"));
        }

        if rep.a_symmetric {
            let spd = if n <= dense_threshold {
                dense_cholesky(&self.a.to_dense()).is_ok()
            } else {
                ichol_droptol(&self.a, 0.0).is_ok()
            };
            rep.a_spd = Some(spd);
            if !spd {
                rep.failures.push("A is not positive definite".into());
            }
        }

        let mut d_spd = false;
        if rep.d_symmetric {
            if self.d.nnz() == 0 || self.d.max_abs() == 0.0 {
                rep.d_sps = Some(true);
            } else if l <= dense_threshold {
                match symmetric_eigenvalues(&self.d.to_dense()) {
                    Ok(ev) => {
                        let scale = ev.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-14);
                        let lo = ev.first().copied().unwrap_or(0.0);
                        rep.d_sps = Some(lo >= -1e-10 * scale);
                        d_spd = lo > 1e-10 * scale;
                    }
                    Err(e) => rep.warnings.push(format!("eigenvalues of D unavailable: {e}")),
                }
            } else {
                d_spd = ichol_droptol(&self.d, 0.0).is_ok();
                rep.warnings.push("D above dense threshold: semidefiniteness only checked via factorization".into());
                rep.d_sps = if d_spd { Some(true) } else { None };
            }
            if rep.d_sps == Some(false) {
                rep.failures.push("D is not positive semidefinite".into());
            }
        }
        rep.d_spd = d_spd;

        if n.max(m) <= dense_threshold {
            let rank = numerical_rank(&self.bt.to_dense(), 1e-10);
            rep.b_rank = Some(rank);
            if rank < m {
                rep.failures.push(format!("B has rank {rank} < m = {m}"));
            }
        } else {
            rep.warnings.push("rank of B not checked above the dense threshold".into());
        }
        if !d_spd {
            if m.max(l) <= dense_threshold {
                let rank = numerical_rank(&self.ct.to_dense(), 1e-10);
                rep.c_rank = Some(rank);
                if rank < l {
                    rep.failures.push(format!("C has rank {rank} < l = {l} while D is singular"));
                }
            } else {
                rep.warnings.push("rank of C not checked above the dense threshold".into());
            }
        }
        rep.passed = rep.failures.is_empty();
        rep
    }
}

fn add_spmv(m: &SparseMatrix, x: &[f64], out: &mut [f64]) -> Result<()> {
    if m.ncols() != x.len() || m.nrows() != out.len() {
        return Err(Error::dims("add_spmv", m.ncols(), x.len()));
    }
    for (i, o) in out.iter_mut().enumerate() {
        let (cols, vals) = m.row(i);
        *o += cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum::<f64>();
    }
    Ok(())
}

/// Outcome of [`BlockSystem::validate`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub a_symmetric: bool,
    pub a_spd: Option<bool>,
    pub d_symmetric: bool,
    pub d_sps: Option<bool>,
    pub d_spd: bool,
    pub m_le_n: bool,
    pub b_rank: Option<usize>,
    pub c_rank: Option<usize>,
    pub passed: bool,
    pub failures: Vec<String>,
    pub warnings: Vec<String>,
}

/// Blocks of a hat-layout system with right-hand side (f, h, −g).
#[derive(Debug, Clone, PartialEq)]
pub struct HatBlockSystem {
    pub a: SparseMatrix,
    pub b: SparseMatrix,
    pub c: SparseMatrix,
    pub d: SparseMatrix,
    /// Stacked right-hand side in the order (f, h, −g).
    pub rhs: Vector,
}

impl HatBlockSystem {
    pub fn new(a: SparseMatrix, b: SparseMatrix, c: SparseMatrix, d: SparseMatrix, rhs: Vector) -> Result<Self> {
        let (n, m, l) = check_shapes(&a, &b, &c, &d)?;
        if rhs.len() != n + m + l {
            return Err(Error::dims("hat right-hand side", n + m + l, rhs.len()));
        }
        Ok(HatBlockSystem { a, b, c, d, rhs })
    }

    /// Hat system whose solution (x, z, y) is all ones.
    pub fn with_unit_solution(a: SparseMatrix, b: SparseMatrix, c: SparseMatrix, d: SparseMatrix) -> Result<Self> {
        let (n, m, l) = check_shapes(&a, &b, &c, &d)?;
        let mut sys = Self::new(a, b, c, d, Vector::zeros(n + m + l))?;
        let rhs = sys.assemble_monolithic().spmv(&vec![1.0; n + m + l])?;
        sys.rhs = Vector::new(rhs)?;
        Ok(sys)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.a.nrows(), self.b.nrows(), self.c.nrows())
    }

    /// The monolithic matrix [[A,0,Bᵀ],[0,D,C],[−B,−Cᵀ,0]].
    pub fn assemble_monolithic(&self) -> SparseMatrix {
        let (n, m, l) = self.dims();
        let bt = self.b.transpose();
        let nb = self.b.scaled(-1.0);
        let nct = self.c.transpose().scaled(-1.0);
        SparseMatrix::from_blocks(
            &[n, l, m],
            &[n, l, m],
            &[
                vec![Some(&self.a), None, Some(&bt)],
                vec![None, Some(&self.d), Some(&self.c)],
                vec![Some(&nb), Some(&nct), None],
            ],
        )
        .expect("block shapes checked at construction")
    }

    /// The equivalent standard-layout system.
    pub fn to_standard(&self) -> Result<BlockSystem> {
        hat_to_standard(self)
    }
}

/// Converts a hat-layout system to the standard layout by negating the last
/// row block and permuting the (z, y) blocks.
pub fn hat_to_standard(sys: &HatBlockSystem) -> Result<BlockSystem> {
    let (n, m, l) = sys.dims();
    let r = &sys.rhs;
    if r.len() != n + m + l {
        return Err(Error::dims("hat right-hand side", n + m + l, r.len()));
    }
    let f = Vector::new(r[..n].to_vec())?;
    let h = Vector::new(r[n..n + l].to_vec())?;
    let g = Vector::new(r[n + l..].iter().map(|v| -v).collect())?;
    BlockSystem::new(sys.a.clone(), sys.b.clone(), sys.c.clone(), sys.d.clone(), f, g, h)
}

/// Maps a hat-ordered vector (x, z, y) to the standard order (x, y, z).
pub fn hat_to_standard_vector(u: &[f64], dims: (usize, usize, usize)) -> Vec<f64> {
    let (n, m, l) = dims;
    let mut out = Vec::with_capacity(u.len());
    out.extend_from_slice(&u[..n]);
    out.extend_from_slice(&u[n + l..n + l + m]);
    out.extend_from_slice(&u[n..n + l]);
    out
}
