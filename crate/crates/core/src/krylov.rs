//! GMRES with right (default) or left preconditioning.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dense::DenseMatrix;
use crate::linalg::sparse::SparseMatrix;
use crate::linalg::vector::{axpy, dot, norm2};
use crate::precond::BlockPreconditioner;
use crate::system::BlockSystem;

/// Anything that can form y = K·x.
pub trait LinearOperator {
    fn order(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl LinearOperator for BlockSystem {
    fn order(&self) -> usize {
        BlockSystem::order(self)
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        BlockSystem::apply(self, x)
    }
}

impl LinearOperator for SparseMatrix {
    fn order(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.spmv(x)
    }
}

impl LinearOperator for DenseMatrix {
    fn order(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.matvec(x)
    }
}

/// Anything that can form M⁻¹·r.
pub trait Preconditioner {
    fn apply_inverse(&self, r: &[f64]) -> Result<Vec<f64>>;
}

impl Preconditioner for BlockPreconditioner<'_> {
    fn apply_inverse(&self, r: &[f64]) -> Result<Vec<f64>> {
        BlockPreconditioner::apply_inverse(self, r)
    }
}

/// Where the preconditioner is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecondSide {
    /// Arnoldi on K·M⁻¹, stopping on the true residual ‖b − Kx‖/‖b‖.
    #[default]
    Right,
    /// Arnoldi on M⁻¹·K, stopping on ‖M⁻¹(b − Kx)‖/‖M⁻¹b‖ as MATLAB's gmres does.
    Left,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub tol: f64,
    pub maxit: usize,
    /// Restart length; `None` runs full GMRES.
    pub restart: Option<usize>,
    pub record_history: bool,
    #[serde(default)]
    pub side: PrecondSide,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            tol: 1e-6,
            maxit: 1000,
            restart: None,
            record_history: true,
            side: PrecondSide::Right,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol >= 0.0) || !self.tol.is_finite() {
            return Err(Error::InvalidArgument(format!("tol must be nonnegative, got {}", self.tol)));
        }
        if self.maxit == 0 {
            return Err(Error::InvalidArgument("maxit must be at least 1".into()));
        }
        if self.restart == Some(0) {
            return Err(Error::InvalidArgument("restart must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// IT, the number of Arnoldi steps taken.
    pub iterations: usize,
    pub converged: bool,
    /// Ended on an invariant Krylov subspace.
    pub breakdown: bool,
    /// ‖b − K xₖ‖ / ‖b‖ after every step (empty unless history is recorded).
    pub relative_residuals: Vec<f64>,
    /// ‖b − K x‖ / ‖b‖ at exit.
    pub final_residual: f64,
    /// The quantity compared against `tol`; equals `final_residual` for right preconditioning.
    pub stopping_residual: f64,
    /// Largest |VᵀV − I| entry seen over the run.
    pub orthogonality_loss: f64,
    pub wall_time: f64,
}

/// Solves K x = b from x⁰ = 0.
pub fn gmres(
    k: &dyn LinearOperator,
    m: Option<&dyn Preconditioner>,
    b: &[f64],
    cfg: &SolveConfig,
) -> Result<(Vec<f64>, SolveReport)> {
    cfg.validate()?;
    let n = k.order();
    if b.len() != n {
        return Err(Error::dims("gmres right-hand side", n, b.len()));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("right-hand side is not finite".into()));
    }
    let start = Instant::now();
    let precond = |v: &[f64]| -> Result<Vec<f64>> {
        match m {
            Some(p) => p.apply_inverse(v),
            None => Ok(v.to_vec()),
        }
    };

    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    let mut report = SolveReport {
        iterations: 0,
        converged: false,
        breakdown: false,
        relative_residuals: Vec::new(),
        final_residual: 1.0,
        stopping_residual: 1.0,
        orthogonality_loss: 0.0,
        wall_time: 0.0,
    };
    if bnorm == 0.0 {
        report.converged = true;
        report.final_residual = 0.0;
        report.stopping_residual = 0.0;
        report.wall_time = start.elapsed().as_secs_f64();
        return Ok((x, report));
    }

    let left = cfg.side == PrecondSide::Left && m.is_some();
    // residual in the space the Arnoldi process runs in
    let stop_residual = |r: &[f64]| -> Result<Vec<f64>> {
        if left {
            precond(r)
        } else {
            Ok(r.to_vec())
        }
    };
    let mut r = stop_residual(b)?;
    let stop_norm = norm2(&r);
    if stop_norm == 0.0 {
        return Err(Error::InvalidArgument("preconditioned right-hand side vanishes".into()));
    }
    let cycle = cfg.restart.unwrap_or(cfg.maxit).min(cfg.maxit).min(n.max(1));
    'outer: while report.iterations < cfg.maxit {
        let beta = norm2(&r);
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|t| t / beta).collect()];
        // Hessenberg columns after Givens rotations
        let mut h: Vec<Vec<f64>> = Vec::new();
        let mut cs: Vec<(f64, f64)> = Vec::new();
        let mut g = vec![beta];
        let x0 = x.clone();

        for j in 0..cycle {
            if report.iterations >= cfg.maxit {
                break 'outer;
            }
            report.iterations += 1;
            let mut w = if left {
                precond(&k.apply(&v[j])?)?
            } else {
                k.apply(&precond(&v[j])?)?
            };
            let w_norm0 = norm2(&w);
            let mut col = vec![0.0; j + 2];
            for (i, vi) in v.iter().enumerate() {
                let hij = dot(&w, vi);
                col[i] += hij;
                axpy(-hij, vi, &mut w);
            }
            let mut w_norm = norm2(&w);
            if w_norm < std::f64::consts::FRAC_1_SQRT_2 * w_norm0 {
                for (i, vi) in v.iter().enumerate() {
                    let c = dot(&w, vi);
                    col[i] += c;
                    axpy(-c, vi, &mut w);
                }
                w_norm = norm2(&w);
            }
            col[j + 1] = w_norm;
            let happy = w_norm <= 1e-14 * w_norm0.max(f64::MIN_POSITIVE);

            for (i, &(c, s)) in cs.iter().enumerate() {
                let (a, bb) = (col[i], col[i + 1]);
                col[i] = c * a + s * bb;
                col[i + 1] = -s * a + c * bb;
            }
            let (c, s) = givens(col[j], col[j + 1]);
            col[j] = c * col[j] + s * col[j + 1];
            col[j + 1] = 0.0;
            cs.push((c, s));
            let gj = g[j];
            g[j] = c * gj;
            g.push(-s * gj);
            h.push(col);

            // x = x0 + M⁻¹ V y (right) or x0 + V y (left)
            let y = back_substitute(&h, &g[..=j]);
            let mut comb = vec![0.0; n];
            for (yi, vi) in y.iter().zip(&v) {
                axpy(*yi, vi, &mut comb);
            }
            let dx = if left { comb } else { precond(&comb)? };
            x.copy_from_slice(&x0);
            axpy(1.0, &dx, &mut x);
            let kx = k.apply(&x)?;
            let true_r: Vec<f64> = b.iter().zip(&kx).map(|(bi, ki)| bi - ki).collect();
            let res = norm2(&true_r) / bnorm;
            r = stop_residual(&true_r)?;
            let stop = if left { norm2(&r) / stop_norm } else { res };
            report.final_residual = res;
            report.stopping_residual = stop;
            if cfg.record_history {
                report.relative_residuals.push(res);
            }

            if stop <= cfg.tol {
                report.converged = true;
                break 'outer;
            }
            if happy || !w_norm.is_finite() {
                report.breakdown = true;
                report.converged = w_norm.is_finite();
                break 'outer;
            }
            let next: Vec<f64> = w.iter().map(|t| t / w_norm).collect();
            let loss = v.iter().map(|vi| dot(vi, &next).abs()).fold(0.0, f64::max);
            report.orthogonality_loss = report.orthogonality_loss.max(loss);
            v.push(next);
        }
    }
    report.wall_time = start.elapsed().as_secs_f64();
    Ok((x, report))
}

fn givens(a: f64, b: f64) -> (f64, f64) {
    if b == 0.0 {
        (1.0, 0.0)
    } else {
        let r = a.hypot(b);
        (a / r, b / r)
    }
}

// Solves the leading upper-triangular system R y = g, with R stored by columns.
fn back_substitute(h: &[Vec<f64>], g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let mut y = g.to_vec();
    for i in (0..k).rev() {
        for j in i + 1..k {
            y[i] -= h[j][i] * y[j];
        }
        y[i] /= h[i][i];
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::precond::{ApproxBlocks, PreconKind, Recipe};
    use crate::problems::random_valid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_converges_in_one_step() {
        let k = SparseMatrix::identity(5);
        let b = vec![1.0, -2.0, 3.0, 0.5, 4.0];
        let (x, rep) = gmres(&k, None, &b, &SolveConfig::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
        for (xi, bi) in x.iter().zip(&b) {
            assert!((xi - bi).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let k = SparseMatrix::identity(3);
        let (x, rep) = gmres(&k, None, &[0.0; 3], &SolveConfig::default()).unwrap();
        assert_eq!(x, vec![0.0; 3]);
        assert_eq!(rep.iterations, 0);
        assert!(rep.converged);
    }

    #[test]
    fn bad_config_rejected() {
        let k = SparseMatrix::identity(2);
        let cfg = SolveConfig {
            maxit: 0,
            ..Default::default()
        };
        assert!(gmres(&k, None, &[1.0, 1.0], &cfg).is_err());
        assert!(gmres(&k, None, &[1.0], &SolveConfig::default()).is_err());
    }

    #[test]
    fn exact_f5_one_iteration() {
        let s = random_valid(7, 4, 3, 2).unwrap();
        let bl = ApproxBlocks::build(&s, Recipe::Exact).unwrap();
        let p = BlockPreconditioner::new(PreconKind::F5, &bl, &s).unwrap();
        let (_, rep) = gmres(&s, Some(&p), &s.rhs(), &SolveConfig::default()).unwrap();
        assert_eq!(rep.iterations, 1);
    }

    #[test]
    fn full_krylov_space_solves_exactly_and_monotone() {
        for seed in 0..20 {
            let s = random_valid(8, 5, 3, seed).unwrap();
            let cfg = SolveConfig {
                tol: 0.0,
                maxit: s.order(),
                ..Default::default()
            };
            let (x, rep) = gmres(&s, None, &s.rhs(), &cfg).unwrap();
            assert!(rep.final_residual <= 1e-8, "seed {seed}: {}", rep.final_residual);
            let err = x.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
            assert!(err < 1e-6, "seed {seed}: {err}");
            for w in rep.relative_residuals.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
            assert!(rep.orthogonality_loss <= 1e-8);
        }
    }

    #[test]
    fn spd_symmetric_part_matches_direct_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 12;
        let mut a = DenseMatrix::identity(n).scaled(3.0);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] += rng.gen_range(-0.2..0.2);
            }
        }
        let u: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 2.0).collect();
        let b = a.matvec(&u).unwrap();
        let cfg = SolveConfig {
            tol: 1e-12,
            ..Default::default()
        };
        let (x, rep) = gmres(&a, None, &b, &cfg).unwrap();
        assert!(rep.converged);
        let err = norm2(&crate::linalg::vector::sub(&x, &u)) / norm2(&u);
        assert!(err < 1e-8);
    }

    #[test]
    fn left_side_stops_on_preconditioned_residual() {
        let s = random_valid(12, 7, 4, 3).unwrap();
        let bl = ApproxBlocks::build(&s, Recipe::Ex63).unwrap();
        let p = BlockPreconditioner::new(PreconKind::Lt, &bl, &s).unwrap();
        let cfg = SolveConfig {
            tol: 1e-9,
            side: PrecondSide::Left,
            ..Default::default()
        };
        let (x, rep) = gmres(&s, Some(&p), &s.rhs(), &cfg).unwrap();
        assert!(rep.converged);
        assert!(rep.stopping_residual <= 1e-9);
        let r: Vec<f64> = crate::linalg::vector::sub(&s.rhs(), &s.apply(&x).unwrap());
        let pr = norm2(&p.apply_inverse(&r).unwrap()) / norm2(&p.apply_inverse(&s.rhs()).unwrap());
        assert!((pr - rep.stopping_residual).abs() < 1e-12);
    }

    #[test]
    fn restarted_run_still_converges() {
        let s = random_valid(10, 6, 4, 9).unwrap();
        let bl = ApproxBlocks::build(&s, Recipe::Ex63).unwrap();
        let p = BlockPreconditioner::new(PreconKind::D, &bl, &s).unwrap();
        let cfg = SolveConfig {
            tol: 1e-8,
            restart: Some(5),
            ..Default::default()
        };
        let (_, rep) = gmres(&s, Some(&p), &s.rhs(), &cfg).unwrap();
        assert!(rep.converged);
        assert!(rep.final_residual <= 1e-8);
    }
}
