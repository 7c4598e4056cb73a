//! Spectral constants, eigenvalue-bound calculators and dense validation of
//! the preconditioned matrix M⁻¹K.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::{factor_dense, factor_spd, CholFactor, FactorStrategy, DEFAULT_DENSE_THRESHOLD};
use crate::linalg::dense::DenseMatrix;
use crate::linalg::eigen::{nonsymmetric_eigen, spd_power, symmetric_eigen, symmetric_eigenvalues};
use crate::linalg::lanczos::lanczos_extremes;
use crate::precond::{schur_dense, ApproxBlocks, BlockPreconditioner, PreconKind, Selection};
use crate::system::BlockSystem;

/// g₁(s) = 1 + s/2 − √(s²/4 + s).
pub fn g1(s: f64) -> Result<f64> {
    check_nonneg(s)?;
    Ok(g1_raw(s))
}

/// g₂(s) = 1 + s/2 + √(s²/4 + s).
pub fn g2(s: f64) -> Result<f64> {
    check_nonneg(s)?;
    Ok(g2_raw(s))
}

fn check_nonneg(s: f64) -> Result<()> {
    if s >= 0.0 && s.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("g1/g2 need a finite s ≥ 0, got {s}")))
    }
}

// g1 = 1/g2 avoids the cancellation in 1 + s/2 − √(s²/4 + s) for large s.
fn g1_raw(s: f64) -> f64 {
    1.0 / g2_raw(s)
}

fn g2_raw(s: f64) -> f64 {
    1.0 + 0.5 * s + (0.25 * s * s + s).sqrt()
}

/// ϱ(s, t) = max{(s−1)², (1−t)²}.
pub fn varrho(s: f64, t: f64) -> f64 {
    ((s - 1.0) * (s - 1.0)).max((1.0 - t) * (1.0 - t))
}

/// Lower branch function: ϑ̲ on [0, 1], τ̲ + ω̲ on (1, 2].
pub fn h_under(t: f64, est: &SpectralEstimates) -> Result<f64> {
    h_branch(t, est.theta_lo, est.tau_lo + est.omega_lo)
}

/// Upper branch function: ϑ̄ on [0, 1], τ̄ + ω̄ on (1, 2].
pub fn h_bar(t: f64, est: &SpectralEstimates) -> Result<f64> {
    h_branch(t, est.theta_hi, est.tau_hi + est.omega_hi)
}

fn h_branch(t: f64, first: f64, second: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&t) {
        Ok(first)
    } else if t > 1.0 && t <= 2.0 {
        Ok(second)
    } else {
        Err(Error::HypothesisViolated(format!("branch argument {t} outside [0, 2]")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateMethod {
    /// Full symmetric spectra of every pencil.
    DenseExact,
    /// Lanczos extremes; spectral maxima bounded over [μ̲, μ̄].
    IntervalEnvelope,
}

/// Extreme eigenvalues of the pencils that enter the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimates {
    /// Spectrum of M_A⁻¹A.
    pub mu_lo: f64,
    pub mu_hi: f64,
    /// Spectrum of Ŝ⁻¹S.
    pub nu_lo: f64,
    pub nu_hi: f64,
    /// Spectrum of M̂_S⁻¹CŜ⁻¹Cᵀ.
    pub omega_lo: f64,
    pub omega_hi: f64,
    /// Spectrum of M̂_S⁻¹D.
    pub tau_lo: f64,
    pub tau_hi: f64,
    /// Spectrum of M̂_S⁻¹(D + CŜ⁻¹Cᵀ).
    pub theta_lo: f64,
    pub theta_hi: f64,
    pub delta_lo: f64,
    pub delta_hi: f64,
    /// λ_max of M_A⁻¹A(I − M_A⁻¹A).
    pub lmax_lambda_one_minus: f64,
    /// λ_max of (I − M_A⁻¹A)²M_A⁻¹A.
    pub lmax_one_minus_sq_lambda: f64,
    pub method: EstimateMethod,
}

fn f_one_minus(l: f64) -> f64 {
    l * (1.0 - l)
}

fn f_one_minus_sq(l: f64) -> f64 {
    (1.0 - l) * (1.0 - l) * l
}

impl SpectralEstimates {
    /// Estimates whose μ-derived maxima come from the full spectrum of M_A⁻¹A.
    pub fn from_mu_spectrum(mu: &[f64], nu: (f64, f64), omega: (f64, f64), tau: (f64, f64), theta: (f64, f64)) -> Result<Self> {
        if mu.is_empty() {
            return Err(Error::InvalidArgument("empty μ spectrum".into()));
        }
        let lo = mu.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = mu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut est = Self::assemble((lo, hi), nu, omega, tau, theta, EstimateMethod::DenseExact);
        est.lmax_lambda_one_minus = mu.iter().map(|&l| f_one_minus(l)).fold(f64::NEG_INFINITY, f64::max);
        est.lmax_one_minus_sq_lambda = mu.iter().map(|&l| f_one_minus_sq(l)).fold(f64::NEG_INFINITY, f64::max);
        Ok(est)
    }

    /// Estimates from extreme values only; μ-derived maxima use the envelope over [μ̲, μ̄].
    pub fn from_extremes(mu: (f64, f64), nu: (f64, f64), omega: (f64, f64), tau: (f64, f64), theta: (f64, f64)) -> Self {
        let mut est = Self::assemble(mu, nu, omega, tau, theta, EstimateMethod::IntervalEnvelope);
        est.lmax_lambda_one_minus = envelope_max(f_one_minus, mu, &[0.5]);
        est.lmax_one_minus_sq_lambda = envelope_max(f_one_minus_sq, mu, &[1.0 / 3.0, 1.0]);
        est
    }

    fn assemble(
        mu: (f64, f64),
        nu: (f64, f64),
        omega: (f64, f64),
        tau: (f64, f64),
        theta: (f64, f64),
        method: EstimateMethod,
    ) -> Self {
        let d = |m: f64| m * (2.0 - m);
        SpectralEstimates {
            mu_lo: mu.0,
            mu_hi: mu.1,
            nu_lo: nu.0,
            nu_hi: nu.1,
            omega_lo: omega.0,
            omega_hi: omega.1,
            tau_lo: tau.0,
            tau_hi: tau.1,
            theta_lo: theta.0,
            theta_hi: theta.1,
            delta_lo: d(mu.0).min(d(mu.1)),
            delta_hi: d(mu.0).max(d(mu.1)).max(1.0),
            lmax_lambda_one_minus: 0.0,
            lmax_one_minus_sq_lambda: 0.0,
            method,
        }
    }

    /// Estimates of exact blocks: M_A = A, Ŝ = S, M̂_S = M_S.
    pub fn exact_blocks(omega: (f64, f64), tau: (f64, f64)) -> Self {
        Self::from_mu_spectrum(&[1.0], (1.0, 1.0), omega, tau, (1.0, 1.0)).expect("nonempty spectrum")
    }

    /// Hypothesis of the bound formulas: 0 < μ̄ ≤ 2, 0 < ν̄ ≤ 2, 0 < μ̄ν̄ < 2.
    pub fn check_hypothesis(&self) -> Result<()> {
        let (mu, nu) = (self.mu_hi, self.nu_hi);
        if !(mu > 0.0 && mu <= 2.0) {
            return Err(Error::HypothesisViolated(format!("μ̄ = {mu} not in (0, 2]")));
        }
        if !(nu > 0.0 && nu <= 2.0) {
            return Err(Error::HypothesisViolated(format!("ν̄ = {nu} not in (0, 2]")));
        }
        if !(mu * nu > 0.0 && mu * nu < 2.0) {
            return Err(Error::HypothesisViolated(format!("μ̄ν̄ = {} not in (0, 2)", mu * nu)));
        }
        Ok(())
    }
}

fn envelope_max(f: fn(f64) -> f64, (lo, hi): (f64, f64), critical: &[f64]) -> f64 {
    let mut m = f(lo).max(f(hi));
    for &c in critical {
        if c > lo && c < hi {
            m = m.max(f(c));
        }
    }
    m
}

/// Options for [`estimate_constants_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralOptions {
    /// Largest block order handled with full dense spectra.
    pub dense_threshold: usize,
    pub lanczos_steps: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions {
            dense_threshold: DEFAULT_DENSE_THRESHOLD,
            lanczos_steps: 200,
        }
    }
}

pub fn estimate_constants(sys: &BlockSystem, blocks: &ApproxBlocks) -> Result<SpectralEstimates> {
    estimate_constants_with(sys, blocks, SpectralOptions::default())
}

pub fn estimate_constants_with(sys: &BlockSystem, blocks: &ApproxBlocks, opts: SpectralOptions) -> Result<SpectralEstimates> {
    let (n, m, l) = sys.dims();
    if blocks.dims() != (n, m, l) {
        return Err(Error::dims("approximation blocks vs system", n + m + l, {
            let (a, b, c) = blocks.dims();
            a + b + c
        }));
    }
    if n.max(m).max(l) <= opts.dense_threshold {
        estimate_dense(sys, blocks)
    } else {
        estimate_lanczos(sys, blocks, opts)
    }
}

fn extremes(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    (v[0], v[v.len() - 1])
}

/// Ascending eigenvalues of L⁻¹·T·L⁻ᵀ.
fn pencil_dense(f: &CholFactor, t: &DenseMatrix) -> Result<Vec<f64>> {
    if t.nrows() == 0 {
        return Ok(Vec::new());
    }
    let x = f.forward_solve_block(t)?;
    let y = f.forward_solve_block(&x.transpose())?;
    symmetric_eigenvalues(&y.symmetrized())
}

fn estimate_dense(sys: &BlockSystem, blocks: &ApproxBlocks) -> Result<SpectralEstimates> {
    let a = sys.a().to_dense();
    let mu = pencil_dense(&blocks.m_a, &a)?;
    let a_exact = factor_dense(&a)?;
    let s = schur_dense(&a_exact, sys.bt())?;
    let nu = pencil_dense(&blocks.s_hat, &s)?;
    let (omega, tau, theta);
    if sys.c().nnz() == 0 {
        omega = (0.0, 0.0);
        let t = pencil_dense(&blocks.ms_hat, &sys.d().to_dense())?;
        tau = extremes(&t);
        theta = tau;
    } else {
        let csc = schur_dense(&blocks.s_hat, sys.ct())?;
        omega = extremes(&pencil_dense(&blocks.ms_hat, &csc)?);
        if sys.d().nnz() == 0 {
            tau = (0.0, 0.0);
            theta = omega;
        } else {
            let d = sys.d().to_dense();
            tau = extremes(&pencil_dense(&blocks.ms_hat, &d)?);
            theta = extremes(&pencil_dense(&blocks.ms_hat, &d.add(&csc)?)?);
        }
    }
    SpectralEstimates::from_mu_spectrum(&mu, extremes(&nu), omega, tau, theta)
}

fn estimate_lanczos(sys: &BlockSystem, blocks: &ApproxBlocks, opts: SpectralOptions) -> Result<SpectralEstimates> {
    let (n, m, l) = sys.dims();
    let k = opts.lanczos_steps;
    let sym = |f: &CholFactor, v: &[f64], inner: &dyn Fn(&[f64]) -> Result<Vec<f64>>| -> Result<Vec<f64>> {
        f.forward_solve(&inner(&f.backward_solve(v)?)?)
    };
    let mu = lanczos_extremes(n, k, |v| sym(&blocks.m_a, v, &|x| sys.a().spmv(x)))?;
    let a_exact = factor_spd(sys.a(), FactorStrategy::Exact, opts.dense_threshold)?;
    let s_apply = |x: &[f64]| -> Result<Vec<f64>> { sys.b().spmv(&a_exact.solve(&sys.bt().spmv(x)?)?) };
    let nu = lanczos_extremes(m, k, |v| sym(&blocks.s_hat, v, &s_apply))?;
    let csc = |x: &[f64]| -> Result<Vec<f64>> { sys.c().spmv(&blocks.s_hat.solve(&sys.ct().spmv(x)?)?) };
    let d_apply = |x: &[f64]| sys.d().spmv(x);
    let omega = if sys.c().nnz() == 0 {
        (0.0, 0.0)
    } else {
        lanczos_extremes(l, k, |v| sym(&blocks.ms_hat, v, &csc))?
    };
    let tau = if sys.d().nnz() == 0 {
        (0.0, 0.0)
    } else {
        lanczos_extremes(l, k, |v| sym(&blocks.ms_hat, v, &d_apply))?
    };
    let both = |x: &[f64]| -> Result<Vec<f64>> {
        let mut y = csc(x)?;
        for (yi, di) in y.iter_mut().zip(d_apply(x)?) {
            *yi += di;
        }
        Ok(y)
    };
    let theta = lanczos_extremes(l, k, |v| sym(&blocks.ms_hat, v, &both))?;
    Ok(SpectralEstimates::from_extremes(mu, nu, omega, tau, theta))
}

/// Box containing every eigenvalue: η̲ ≤ Re λ ≤ η̄, |Im λ| ≤ ρ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenBox {
    pub re_lo: f64,
    pub re_hi: f64,
    pub im_abs: f64,
}

impl EigenBox {
    /// Distance by which `z` lies outside the box (0 when inside).
    pub fn violation(&self, z: Complex64) -> f64 {
        let re = (self.re_lo - z.re).max(z.re - self.re_hi).max(0.0);
        let im = (z.im.abs() - self.im_abs).max(0.0);
        re.max(im)
    }

    pub fn contains(&self, z: Complex64, slack: f64) -> bool {
        self.violation(z) <= slack
    }

    fn from_rho_sq(re_lo: f64, re_hi: f64, rho_sq: f64) -> Self {
        EigenBox {
            re_lo,
            re_hi,
            im_abs: rho_sq.max(0.0).sqrt(),
        }
    }
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// The per-kind bound table for the eight preconditioners.
pub fn kind_bounds(kind: PreconKind, e: &SpectralEstimates) -> Result<EigenBox> {
    e.check_hypothesis()?;
    let (mu_lo, mu_hi, nu_lo, nu_hi) = (e.mu_lo, e.mu_hi, e.nu_lo, e.nu_hi);
    let (om_lo, om_hi) = (e.omega_lo, e.omega_hi);
    let xi1 = nu_hi - nu_hi / mu_hi;
    let xi2 = om_hi * nu_hi / mu_lo;
    let xi3 = (1.0 - mu_lo) * xi2;
    let xi4 = (1.0 - e.delta_lo) * xi2;
    let ext1 = e.lmax_lambda_one_minus;
    let ext2 = e.lmax_one_minus_sq_lambda;
    let case_low = mu_hi <= 1.0;
    let case_high = !case_low && mu_lo >= 1.0;

    let b = match kind {
        PreconKind::D => EigenBox::from_rho_sq(0.0, mu_hi.max(e.tau_hi), om_hi + nu_hi * mu_hi),
        PreconKind::Ut | PreconKind::Lt => {
            if case_low {
                EigenBox::from_rho_sq(
                    min_of(&[mu_lo, e.tau_lo, mu_lo * nu_lo]),
                    max_of(&[mu_hi, e.tau_hi, mu_hi * nu_hi]),
                    om_hi + nu_hi * ext1,
                )
            } else if case_high {
                let (a, b) = (g1_raw(xi1), g2_raw(xi1));
                EigenBox::from_rho_sq(
                    min_of(&[mu_lo * a, nu_lo * a, e.tau_lo]),
                    max_of(&[mu_hi * b, nu_hi * b, e.tau_hi]),
                    om_hi,
                )
            } else {
                let (a, b) = (g1_raw(xi1), g2_raw(xi1));
                EigenBox::from_rho_sq(
                    min_of(&[mu_lo, e.tau_lo, a, mu_lo * nu_lo * a]),
                    max_of(&[e.tau_hi, mu_hi * b, nu_hi * b]),
                    om_hi + nu_hi * ext1,
                )
            }
        }
        PreconKind::F1 => EigenBox::from_rho_sq(
            min_of(&[mu_lo, e.tau_lo, e.delta_lo * nu_lo]),
            max_of(&[mu_hi, e.tau_hi, e.delta_hi * nu_hi]),
            om_hi + nu_hi * ext2,
        ),
        PreconKind::F2 => EigenBox::from_rho_sq(
            0.0,
            mu_hi.max(h_bar(nu_hi, e)? + om_hi * (1.0 - nu_lo)) * g2_raw(xi2),
            om_hi + nu_hi * mu_hi,
        ),
        PreconKind::F3 | PreconKind::F4 => {
            let mn_hi = mu_hi * nu_hi;
            let mn_lo = mu_lo * nu_lo;
            if case_low {
                let (a, b) = (g1_raw(xi3), g2_raw(xi3));
                EigenBox::from_rho_sq(
                    min_of(&[mu_lo, h_under(nu_hi, e)? + om_lo * (1.0 - nu_hi), mn_lo / a]) * a,
                    max_of(&[mu_hi, h_bar(nu_hi, e)? + om_hi * (1.0 - nu_lo), mn_hi / b]) * b,
                    om_hi * varrho(mn_hi, mn_lo) + nu_hi * ext1,
                )
            } else {
                let (a, b) = (g1_raw(xi1), g2_raw(xi1));
                let rho_high = om_hi * (nu_hi * mu_hi * (mu_hi - 1.0) + varrho(mn_hi, mn_lo));
                if case_high {
                    EigenBox::from_rho_sq(
                        min_of(&[mu_lo * a, nu_lo * a, h_under(mn_hi, e)? + om_lo * (1.0 - mn_hi)]),
                        max_of(&[mu_hi * b, nu_hi * b, h_bar(mn_hi, e)? + om_hi * (1.0 - mn_lo)]),
                        rho_high,
                    )
                } else {
                    let (a3, b3) = (g1_raw(xi3), g2_raw(xi3));
                    EigenBox::from_rho_sq(
                        min_of(&[mu_lo, h_under(mn_hi, e)? + om_lo * (1.0 - mn_hi), a / a3, mn_lo * a / a3]) * a3,
                        max_of(&[1.0, h_bar(mn_hi, e)? + om_hi * (1.0 - nu_lo), mu_hi * b / b3, nu_hi * b / b3]) * b3,
                        rho_high + nu_hi * ext1,
                    )
                }
            }
        }
        PreconKind::F5 => {
            let (a, b) = (g1_raw(xi4), g2_raw(xi4));
            EigenBox::from_rho_sq(
                min_of(&[mu_lo, h_under(nu_hi, e)? + om_lo * (1.0 - nu_hi), e.delta_lo * nu_lo / a]) * a,
                max_of(&[mu_hi, h_bar(nu_hi, e)? + om_hi * (1.0 - nu_lo), e.delta_hi * nu_hi / b]) * b,
                om_hi * varrho(e.delta_hi * nu_hi, e.delta_lo * nu_lo) + nu_hi * ext2,
            )
        }
    };
    Ok(b)
}

/// The general three-case bound for any selection of (Y_A, Z_A, W_S).
pub fn selection_bounds(sel: Selection, e: &SpectralEstimates) -> Result<EigenBox> {
    e.check_hypothesis()?;
    let (mu_lo, mu_hi, nu_lo, nu_hi) = (e.mu_lo, e.mu_hi, e.nu_lo, e.nu_hi);
    let count = sel.y_a as u8 + sel.z_a as u8;
    // spectrum of Γ and λ_max((I − Y_A A)(I − Z_A A)M_A⁻¹A)
    let (ga_lo, ga_hi, extra) = match count {
        0 => (0.0, 0.0, mu_hi),
        1 => (mu_lo, mu_hi, e.lmax_lambda_one_minus),
        _ => (e.delta_lo, e.delta_hi, e.lmax_one_minus_sq_lambda),
    };
    // W_S-derived constants
    let (vp_lo, vp_hi, ph_lo, ph_hi, ka_lo, ka_hi) = if sel.w_s {
        (nu_lo, nu_hi, e.omega_lo, e.omega_hi, e.theta_lo, e.theta_hi)
    } else {
        (0.0, 0.0, 0.0, 0.0, e.tau_lo, e.tau_hi)
    };
    let hw_lo = |t: f64| h_branch(t, ka_lo, e.tau_lo + ph_lo);
    let hw_hi = |t: f64| h_branch(t, ka_hi, e.tau_hi + ph_hi);
    let xi_hat = ph_hi * vp_hi * (1.0 - ga_lo) / mu_lo;
    let xi1 = nu_hi - nu_hi / mu_hi;
    let om = e.omega_hi;

    let b = if ga_hi <= 1.0 {
        let (a, b) = (g1_raw(xi_hat), g2_raw(xi_hat));
        EigenBox::from_rho_sq(
            min_of(&[mu_lo, hw_lo(vp_hi)? + ph_lo * (1.0 - vp_hi), ga_lo * nu_lo / a]) * a,
            max_of(&[mu_hi, hw_hi(vp_hi)? + ph_hi * (1.0 - vp_lo), ga_hi * nu_hi / b]) * b,
            om - ph_hi + ph_hi * varrho(ga_hi * vp_hi, ga_lo * vp_lo) + nu_hi * extra,
        )
    } else {
        let (a1, b1) = (g1_raw(xi1), g2_raw(xi1));
        let rho_sq = om - ph_hi + ph_hi * ((mu_hi - 1.0) * mu_hi * vp_hi + varrho(mu_hi * vp_hi, mu_lo * vp_lo));
        if ga_lo >= 1.0 {
            EigenBox::from_rho_sq(
                min_of(&[mu_lo * a1, nu_lo * a1, hw_lo(mu_hi * vp_hi)? + ph_lo * (1.0 - mu_hi * vp_hi)]),
                max_of(&[mu_hi * b1, nu_hi * b1, hw_hi(mu_hi * vp_hi)? + ph_hi * (1.0 - mu_lo * vp_lo)]),
                rho_sq,
            )
        } else {
            let (a, b) = (g1_raw(xi_hat), g2_raw(xi_hat));
            EigenBox::from_rho_sq(
                min_of(&[
                    mu_lo,
                    hw_lo(mu_hi * vp_hi)? + ph_lo * (1.0 - mu_hi * vp_hi),
                    a1 / a,
                    mu_lo * nu_lo * a1 / a,
                ]) * a,
                max_of(&[1.0, hw_hi(mu_hi * vp_hi)? + ph_hi * (1.0 - vp_lo), mu_hi * b1 / b, nu_hi * b1 / b]) * b,
                rho_sq + nu_hi * e.lmax_lambda_one_minus,
            )
        }
    };
    Ok(b)
}

/// Bounds when all three approximations are exact.
pub fn bounds_exact_form(kind: PreconKind, omega_hi: f64, tau_lo: f64) -> EigenBox {
    match kind {
        PreconKind::D => EigenBox::from_rho_sq(0.0, 1.0, omega_hi + 1.0),
        PreconKind::Ut | PreconKind::Lt | PreconKind::F1 => EigenBox::from_rho_sq(tau_lo, 1.0, omega_hi),
        PreconKind::F2 => EigenBox::from_rho_sq(0.0, g2_raw(omega_hi), omega_hi + 1.0),
        PreconKind::F3 | PreconKind::F4 | PreconKind::F5 => EigenBox::from_rho_sq(1.0, 1.0, 0.0),
    }
}

/// Box for K̃ = [[Ã, B̃ᵀ, Ẽᵀ], [−B̃, D̃, C̃ᵀ], [Ẽ, −C̃, F̃]].
///
/// Requires Ã SPD, D̃ symmetric and F̃ − ẼÃ⁻¹Ẽᵀ symmetric positive semidefinite.
pub fn bendixson_box(
    a: &DenseMatrix,
    b: &DenseMatrix,
    c: &DenseMatrix,
    d: &DenseMatrix,
    e: &DenseMatrix,
    f: &DenseMatrix,
) -> Result<EigenBox> {
    let (na, nb, nc) = (a.nrows(), d.nrows(), f.nrows());
    let shapes = [
        (a, na, na),
        (b, nb, na),
        (c, nc, nb),
        (d, nb, nb),
        (e, nc, na),
        (f, nc, nc),
    ];
    for (m, r, k) in shapes {
        if m.nrows() != r || m.ncols() != k {
            return Err(Error::dims("bendixson_box block shape", r * k, m.nrows() * m.ncols()));
        }
    }
    let sym_tol = |m: &DenseMatrix| m.is_symmetric(1e-12);
    if !sym_tol(a) || !sym_tol(d) || !sym_tol(f) {
        return Err(Error::HypothesisViolated("Ã, D̃ and F̃ must be symmetric".into()));
    }
    let fa = factor_dense(a).map_err(|_| Error::HypothesisViolated("Ã is not SPD".into()))?;
    // Y = L⁻¹Ẽᵀ, so ẼÃ⁻¹Ẽᵀ = YᵀY; Z = Ã⁻¹Ẽᵀ gives ẼÃ⁻²Ẽᵀ = ZᵀZ
    let y = fa.forward_solve_block(&e.transpose())?;
    let schur = f.sub(&y.transpose().matmul(&y)?)?.symmetrized();
    let schur_ev = sym_values(&schur)?;
    let scale = f.max_abs().max(1.0);
    if schur_ev.first().is_some_and(|&v| v < -1e-12 * scale) {
        return Err(Error::HypothesisViolated("F̃ − ẼÃ⁻¹Ẽᵀ is not positive semidefinite".into()));
    }
    let mut z = DenseMatrix::zeros(na, nc);
    for j in 0..nc {
        z.set_column(j, &fa.solve(&e.row(j).to_vec())?);
    }
    let s = sym_values(&z.transpose().matmul(&z)?.symmetrized())?.last().copied().unwrap_or(0.0).max(0.0);
    let (ga, gb) = (g1_raw(s), g2_raw(s));
    let a_ev = sym_values(a)?;
    let d_ev = sym_values(d)?;
    let mut lo = vec![];
    let mut hi = vec![];
    for ev in [&a_ev, &schur_ev] {
        if let (Some(&first), Some(&last)) = (ev.first(), ev.last()) {
            lo.push(first * ga);
            hi.push(last * gb);
        }
    }
    if let (Some(&first), Some(&last)) = (d_ev.first(), d_ev.last()) {
        lo.push(first);
        hi.push(last);
    }
    let skew = b.matmul_transpose(b)?.add(&c.transpose().matmul(c)?)?.symmetrized();
    let im_sq = sym_values(&skew)?.last().copied().unwrap_or(0.0);
    Ok(EigenBox::from_rho_sq(min_of(&lo), max_of(&hi), im_sq))
}

fn sym_values(m: &DenseMatrix) -> Result<Vec<f64>> {
    if m.nrows() == 0 {
        Ok(Vec::new())
    } else {
        symmetric_eigenvalues(m)
    }
}

/// Assembles K̃ from the six blocks accepted by [`bendixson_box`].
pub fn assemble_tilde(
    a: &DenseMatrix,
    b: &DenseMatrix,
    c: &DenseMatrix,
    d: &DenseMatrix,
    e: &DenseMatrix,
    f: &DenseMatrix,
) -> DenseMatrix {
    let (na, nb, nc) = (a.nrows(), d.nrows(), f.nrows());
    let mut k = DenseMatrix::zeros(na + nb + nc, na + nb + nc);
    k.set_block(0, 0, a);
    k.set_block(0, na, &b.transpose());
    k.set_block(0, na + nb, &e.transpose());
    k.set_block(na, 0, &b.scaled(-1.0));
    k.set_block(na, na, d);
    k.set_block(na, na + nb, &c.transpose());
    k.set_block(na + nb, 0, e);
    k.set_block(na + nb, na, &c.scaled(-1.0));
    k.set_block(na + nb, na + nb, f);
    k
}

/// Real parts from the symmetric part and imaginary parts from the skew part of H.
pub fn classic_bendixson_box(h: &DenseMatrix) -> Result<EigenBox> {
    if !h.is_square() {
        return Err(Error::dims("classic_bendixson_box (square)", h.nrows(), h.ncols()));
    }
    let sym = h.symmetrized();
    let skew = h.sub(&sym)?;
    let ev = sym_values(&sym)?;
    let im_sq = sym_values(&skew.transpose().matmul(&skew)?.symmetrized())?.last().copied().unwrap_or(0.0);
    Ok(EigenBox::from_rho_sq(
        ev.first().copied().unwrap_or(0.0),
        ev.last().copied().unwrap_or(0.0),
        im_sq,
    ))
}

/// Interval [g₁(s), g₂(s)] with s = λ_max(B̂ᵀB̂), which contains the spectrum of LLᵀ for L = [[I, B̂ᵀ], [0, I]].
pub fn unit_triangular_interval(bhat: &DenseMatrix) -> Result<(f64, f64)> {
    let s = sym_values(&bhat.transpose().matmul(bhat)?.symmetrized())?
        .last()
        .copied()
        .unwrap_or(0.0)
        .max(0.0);
    Ok((g1_raw(s), g2_raw(s)))
}

/// Diagnostics returned by [`build_kp`] next to the matrix.
#[derive(Debug, Clone)]
pub struct KpMatrix {
    pub kp: DenseMatrix,
    /// Diagonal of Λ, ascending.
    pub lambda: Vec<f64>,
    /// Diagonal of Γ.
    pub gamma: Vec<f64>,
    /// A was scaled by 1 − ε because Λ had an eigenvalue within ε of 1.
    pub perturbed: bool,
}

pub const KP_EPSILON: f64 = 1e-8;

/// The matrix K_P with the same eigenvalues as M⁻¹K, built densely.
pub fn build_kp(sys: &BlockSystem, blocks: &ApproxBlocks, kind: PreconKind) -> Result<KpMatrix> {
    build_kp_with(sys, blocks, kind, true)
}

/// As [`build_kp`]; `perturb` controls the scaling of A near a unit eigenvalue.
pub fn build_kp_with(sys: &BlockSystem, blocks: &ApproxBlocks, kind: PreconKind, perturb: bool) -> Result<KpMatrix> {
    let (n, m, l) = sys.dims();
    let sel = kind.selection();
    let mut a = sys.a().to_dense();
    // Λ from A^{1/2} M_A⁻¹ A^{1/2} = YᵀY with Y = L⁻¹A^{1/2}
    let lam_of = |a: &DenseMatrix| -> Result<crate::linalg::SymmetricEigen> {
        let y = blocks.m_a.forward_solve_block(&spd_power(a, 0.5)?)?;
        symmetric_eigen(&y.transpose().matmul(&y)?.symmetrized())
    };
    let mut eig = lam_of(&a)?;
    let mut perturbed = false;
    if perturb && eig.values.iter().any(|v| (v - 1.0).abs() < KP_EPSILON) {
        a = a.scaled(1.0 - KP_EPSILON);
        eig = lam_of(&a)?;
        perturbed = true;
    }
    let lambda = eig.values.clone();
    let x = &eig.vectors;
    let gamma: Vec<f64> = match sel.y_a as u8 + sel.z_a as u8 {
        0 => vec![0.0; n],
        1 => lambda.clone(),
        _ => lambda.iter().map(|v| 2.0 * v - v * v).collect(),
    };
    let dplus: Vec<f64> = gamma.iter().map(|g| (1.0 - g).max(0.0).sqrt()).collect();
    let dminus: Vec<f64> = gamma.iter().map(|g| (g - 1.0).max(0.0).sqrt()).collect();
    let lam_half: Vec<f64> = lambda.iter().map(|v| v.sqrt()).collect();
    let p: Vec<f64> = (0..n).map(|i| (dplus[i] + dminus[i]) * lam_half[i]).collect();
    let q: Vec<f64> = (0..n).map(|i| lam_half[i] * (dplus[i] - dminus[i])).collect();

    let s_hat = blocks.s_hat_matrix.to_dense();
    let ms_hat = blocks.ms_hat_matrix.to_dense();
    let s_mhalf = spd_power(&s_hat, -0.5)?;
    let ms_mhalf = spd_power(&ms_hat, -0.5)?;
    let a_mhalf = spd_power(&a, -0.5)?;
    let b = sys.b().to_dense();
    let c = sys.c().to_dense();
    let g = s_mhalf.matmul(&b)?.matmul(&a_mhalf)?.matmul(x)?;
    let h = ms_mhalf.matmul(&c)?.matmul(&s_mhalf)?;
    let d_hat = ms_mhalf.matmul(&sys.d().to_dense())?.matmul(&ms_mhalf)?.symmetrized();
    let (g_w, h_w) = if sel.w_s {
        (g.clone(), h.clone())
    } else {
        (DenseMatrix::zeros(m, n), DenseMatrix::zeros(l, m))
    };
    let mut g_gamma = g.clone();
    g_gamma.scale_cols(&gamma);
    let mut f_w = g_w.clone();
    f_w.scale_cols(&gamma);
    let mut f_w = f_w.matmul_transpose(&g_w)?.scaled(-1.0);
    f_w.add_identity(2.0);
    let hg_w = h_w.matmul(&g_w)?;

    let mut k12 = g.transpose();
    k12.scale_rows(&p);
    let mut k13 = hg_w.transpose();
    k13.scale_rows(&p);
    let mut k21 = g.scaled(-1.0);
    k21.scale_cols(&q);
    let k22 = g_gamma.matmul_transpose(&g)?;
    let k23 = g_gamma.matmul_transpose(&hg_w)?.sub(&h.transpose())?;
    let mut k31 = hg_w.clone();
    k31.scale_cols(&q);
    let mut hg_w_gamma = hg_w.clone();
    hg_w_gamma.scale_cols(&gamma);
    let k32 = h.sub(&hg_w_gamma.matmul_transpose(&g)?)?;
    let k33 = d_hat.add(&h_w.matmul(&f_w)?.matmul_transpose(&h_w)?)?;

    let mut kp = DenseMatrix::zeros(n + m + l, n + m + l);
    kp.set_block(0, 0, &DenseMatrix::from_diag(&lambda));
    kp.set_block(0, n, &k12);
    kp.set_block(0, n + m, &k13);
    kp.set_block(n, 0, &k21);
    kp.set_block(n, n, &k22);
    kp.set_block(n, n + m, &k23);
    kp.set_block(n + m, 0, &k31);
    kp.set_block(n + m, n, &k32);
    kp.set_block(n + m, n + m, &k33);
    Ok(KpMatrix {
        kp,
        lambda,
        gamma,
        perturbed,
    })
}

/// Dense spectrum of M⁻¹K.
pub fn preconditioned_spectrum(sys: &BlockSystem, blocks: &ApproxBlocks, kind: PreconKind) -> Result<Vec<Complex64>> {
    let p = BlockPreconditioner::new(kind, blocks, sys)?;
    nonsymmetric_eigen(&p.preconditioned_dense()?)
}

/// Dense spectrum, bound box and per-eigenvalue containment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumCheck {
    pub kind: PreconKind,
    pub estimates: SpectralEstimates,
    pub bbox: EigenBox,
    pub eigenvalues: Vec<Complex64>,
    pub inside: Vec<bool>,
    pub max_violation: f64,
    pub slack: f64,
}

impl SpectrumCheck {
    pub fn all_inside(&self) -> bool {
        self.inside.iter().all(|&b| b)
    }

    pub fn plot_data(&self) -> PlotData {
        PlotData {
            kind: self.kind,
            points: self
                .eigenvalues
                .iter()
                .zip(&self.inside)
                .map(|(z, &in_box)| PlotPoint { re: z.re, im: z.im, in_box })
                .collect(),
            bbox: self.bbox,
        }
    }
}

/// Scatter points of the spectrum plus the bound rectangle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlotData {
    pub kind: PreconKind,
    pub points: Vec<PlotPoint>,
    pub bbox: EigenBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub re: f64,
    pub im: f64,
    pub in_box: bool,
}

pub const CONTAINMENT_SLACK: f64 = 1e-8;

pub fn spectrum_and_check(sys: &BlockSystem, blocks: &ApproxBlocks, kind: PreconKind) -> Result<SpectrumCheck> {
    let estimates = estimate_constants(sys, blocks)?;
    spectrum_and_check_with(sys, blocks, kind, &estimates)
}

/// As [`spectrum_and_check`] with precomputed estimates.
pub fn spectrum_and_check_with(
    sys: &BlockSystem,
    blocks: &ApproxBlocks,
    kind: PreconKind,
    estimates: &SpectralEstimates,
) -> Result<SpectrumCheck> {
    let bbox = kind_bounds(kind, estimates)?;
    let eigenvalues = preconditioned_spectrum(sys, blocks, kind)?;
    let violations: Vec<f64> = eigenvalues.iter().map(|&z| bbox.violation(z)).collect();
    Ok(SpectrumCheck {
        kind,
        estimates: *estimates,
        bbox,
        inside: violations.iter().map(|&v| v <= CONTAINMENT_SLACK).collect(),
        max_violation: violations.iter().copied().fold(0.0, f64::max),
        eigenvalues,
        slack: CONTAINMENT_SLACK,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sparse::SparseMatrix;
    use crate::precond::Recipe;
    use crate::problems::{random_valid, stokes_modified};

    #[test]
    fn g_functions() {
        assert_eq!(g1(0.0).unwrap(), 1.0);
        assert_eq!(g2(0.0).unwrap(), 1.0);
        for s in [0.5, 1.0, 3.0, 10.0] {
            assert!((g1(s).unwrap() * g2(s).unwrap() - 1.0).abs() < 1e-12);
        }
        // closed form: 2.5 ± √(21)/2
        assert!((g1(3.0).unwrap() - 0.208_712_152_522_079_8).abs() < 1e-12);
        assert!((g2(3.0).unwrap() - 4.791_287_847_477_920).abs() < 1e-12);
        assert!(g1(-1.0).is_err());
    }

    #[test]
    fn varrho_values() {
        assert_eq!(varrho(1.0, 1.0), 0.0);
        assert_eq!(varrho(0.0, 0.0), 1.0);
        assert!((varrho(1.5, 0.2) - 0.64).abs() < 1e-15);
    }

    #[test]
    fn h_branches() {
        let mut e = SpectralEstimates::exact_blocks((0.2, 0.4), (0.1, 0.3));
        e.theta_lo = 0.3;
        assert_eq!(h_under(0.5, &e).unwrap(), 0.3);
        assert_eq!(h_under(1.0, &e).unwrap(), 0.3);
        assert!((h_under(1.0 + 1e-9, &e).unwrap() - 0.3).abs() < 1e-15);
        assert!((h_bar(1.5, &e).unwrap() - 0.7).abs() < 1e-15);
        assert!(h_bar(2.5, &e).is_err());
    }

    fn tiny() -> BlockSystem {
        let a = SparseMatrix::identity(2);
        let b = SparseMatrix::from_triplets(1, 2, &[(0, 0, 1.0)]).unwrap();
        BlockSystem::with_unit_solution(a, b, SparseMatrix::identity(1), SparseMatrix::identity(1)).unwrap()
    }

    #[test]
    fn tiny_exact_estimates() {
        let s = tiny();
        let bl = ApproxBlocks::build(&s, Recipe::Exact).unwrap();
        let e = estimate_constants(&s, &bl).unwrap();
        for v in [e.mu_lo, e.mu_hi, e.nu_lo, e.nu_hi, e.theta_lo, e.theta_hi] {
            assert!((v - 1.0).abs() < 1e-14);
        }
        assert!((e.omega_hi - 0.5).abs() < 1e-14);
        assert!((e.tau_lo - 0.5).abs() < 1e-14);
    }

    #[test]
    fn zero_d_gives_zero_tau() {
        let s = stokes_modified(2).unwrap();
        let bl = ApproxBlocks::build(&s, Recipe::Ex61).unwrap();
        let e = estimate_constants(&s, &bl).unwrap();
        assert_eq!((e.tau_lo, e.tau_hi), (0.0, 0.0));
        assert!((e.mu_lo - 1.0).abs() < 1e-10 && (e.mu_hi - 1.0).abs() < 1e-10);
    }

    #[test]
    fn lanczos_path_matches_dense() {
        let s = random_valid(14, 8, 5, 21).unwrap();
        let bl = ApproxBlocks::build(&s, Recipe::Ex63).unwrap();
        let dense = estimate_constants(&s, &bl).unwrap();
        let opts = SpectralOptions {
            dense_threshold: 4,
            lanczos_steps: 50,
        };
        let lz = estimate_constants_with(&s, &bl, opts).unwrap();
        assert_eq!(lz.method, EstimateMethod::IntervalEnvelope);
        for (x, y) in [
            (dense.nu_lo, lz.nu_lo),
            (dense.nu_hi, lz.nu_hi),
            (dense.omega_hi, lz.omega_hi),
            (dense.theta_lo, lz.theta_lo),
            (dense.tau_hi, lz.tau_hi),
        ] {
            assert!((x - y).abs() < 1e-8 * x.abs().max(1.0), "{x} vs {y}");
        }
        assert!(lz.lmax_lambda_one_minus >= dense.lmax_lambda_one_minus - 1e-12);
    }

    #[test]
    fn exact_form_rows() {
        let e = SpectralEstimates::exact_blocks((0.3, 0.6), (0.4, 0.7));
        for kind in PreconKind::ALL {
            let kb = kind_bounds(kind, &e).unwrap();
            let bex = bounds_exact_form(kind, e.omega_hi, e.tau_lo);
            assert!((kb.re_lo - bex.re_lo).abs() < 1e-10, "{kind}");
            assert!((kb.re_hi - bex.re_hi).abs() < 1e-10, "{kind}");
            assert!((kb.im_abs - bex.im_abs).abs() < 1e-10, "{kind}");
        }
        let f2 = bounds_exact_form(PreconKind::F2, 0.6, 0.0);
        assert!((f2.re_hi - (1.3 + (0.09f64 + 0.6).sqrt())).abs() < 1e-14);
    }

    #[test]
    fn hypothesis_enforced() {
        let mut e = SpectralEstimates::exact_blocks((0.3, 0.6), (0.4, 0.7));
        e.nu_hi = 2.5;
        assert!(matches!(kind_bounds(PreconKind::D, &e), Err(Error::HypothesisViolated(_))));
        e.nu_hi = 1.5;
        e.mu_hi = 1.4;
        assert!(matches!(selection_bounds(PreconKind::F5.selection(), &e), Err(Error::HypothesisViolated(_))));
    }

    #[test]
    fn general_table_matches_per_kind_table() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        while checked < 100 {
            let mu = {
                let (a, b): (f64, f64) = (rng.gen_range(0.05..1.9), rng.gen_range(0.05..1.9));
                (a.min(b), a.max(b))
            };
            let nu = {
                let (a, b): (f64, f64) = (rng.gen_range(0.05..1.9), rng.gen_range(0.05..1.9));
                (a.min(b), a.max(b))
            };
            if mu.1 * nu.1 >= 2.0 {
                continue;
            }
            let om = {
                let (a, b): (f64, f64) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
                (a.min(b), a.max(b))
            };
            let tau = {
                let (a, b): (f64, f64) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
                (a.min(b), a.max(b))
            };
            let theta = (tau.0 + om.0 + 0.01, tau.1 + om.1 + 0.01);
            let e = SpectralEstimates::from_extremes(mu, nu, om, tau, theta);
            for kind in PreconKind::ALL {
                let a = kind_bounds(kind, &e).unwrap();
                let b = selection_bounds(kind.selection(), &e).unwrap();
                assert!((a.re_lo - b.re_lo).abs() <= 1e-12, "{kind} {e:?}");
                assert!((a.re_hi - b.re_hi).abs() <= 1e-12, "{kind} {e:?}");
                assert!((a.im_abs - b.im_abs).abs() <= 1e-12, "{kind} {e:?}");
            }
            checked += 1;
        }
    }

    #[test]
    fn bendixson_trivial_cases() {
        let a = DenseMatrix::from_rows(&[&[2.0, 0.5], &[0.5, 1.0]]);
        let d = DenseMatrix::from_rows(&[&[-0.5]]);
        let f = DenseMatrix::from_rows(&[&[3.0]]);
        let b0 = DenseMatrix::zeros(1, 2);
        let c0 = DenseMatrix::zeros(1, 1);
        let e0 = DenseMatrix::zeros(1, 2);
        let bx = bendixson_box(&a, &b0, &c0, &d, &e0, &f).unwrap();
        assert_eq!(bx.im_abs, 0.0);
        let ev = symmetric_eigenvalues(&a).unwrap();
        assert!((bx.re_lo + 0.5).abs() < 1e-14);
        assert!((bx.re_hi - 3.0).abs() < 1e-14 && ev[1] < 3.0);
        let bad_f = DenseMatrix::from_rows(&[&[-1.0]]);
        assert!(bendixson_box(&a, &b0, &c0, &d, &e0, &bad_f).is_err());
    }

    #[test]
    fn classic_box_trivial_cases() {
        let s = DenseMatrix::from_rows(&[&[1.0, 2.0], &[2.0, -1.0]]);
        assert_eq!(classic_bendixson_box(&s).unwrap().im_abs, 0.0);
        let k = DenseMatrix::from_rows(&[&[0.0, 2.0], &[-2.0, 0.0]]);
        let bx = classic_bendixson_box(&k).unwrap();
        assert_eq!((bx.re_lo, bx.re_hi), (0.0, 0.0));
        assert!((bx.im_abs - 2.0).abs() < 1e-14);
    }

    #[test]
    fn kp_kind_d_structure_and_exact_f5() {
        let s = random_valid(6, 4, 2, 3).unwrap();
        let bl = ApproxBlocks::build(&s, Recipe::Ex63).unwrap();
        let kp = build_kp(&s, &bl, PreconKind::D).unwrap();
        assert!(kp.gamma.iter().all(|&g| g == 0.0));
        let ex = ApproxBlocks::build(&s, Recipe::Exact).unwrap();
        let kp = build_kp(&s, &ex, PreconKind::F5).unwrap();
        let ev = nonsymmetric_eigen(&kp.kp).unwrap();
        assert!(ev.iter().all(|z| (z - 1.0).norm() < 1e-6), "{ev:?}");
    }
}
