//! Lanczos estimates of extreme eigenvalues of a symmetric operator.

use crate::error::Result;
use crate::linalg::dense::DenseMatrix;
use crate::linalg::eigen::symmetric_eigenvalues;
use crate::linalg::vector::{axpy, dot, norm2};

/// Extreme Ritz values (min, max) after at most `steps` Lanczos steps with
/// full reorthogonalization.
///
/// `apply` evaluates y = T x for a symmetric T of order `n`. The Ritz values
/// lie inside the true spectral interval and converge to its ends quickly.
pub fn lanczos_extremes(
    n: usize,
    steps: usize,
    mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<(f64, f64)> {
    if n == 0 {
        return Ok((0.0, 0.0));
    }
    let k = steps.min(n).max(1);
    let mut q: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64 * 0.754_877_666).fract() - 0.5)).collect();
    let nq = norm2(&q);
    q.iter_mut().for_each(|v| *v /= nq);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut alpha = Vec::with_capacity(k);
    let mut beta: Vec<f64> = Vec::with_capacity(k);
    for j in 0..k {
        let mut w = apply(&q)?;
        let a = dot(&w, &q);
        alpha.push(a);
        axpy(-a, &q, &mut w);
        if j > 0 {
            axpy(-beta[j - 1], &basis[j - 1], &mut w);
        }
        basis.push(q);
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&w, b);
                axpy(-c, b, &mut w);
            }
        }
        let bnorm = norm2(&w);
        if j + 1 == k || bnorm <= 1e-12 * alpha.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300) {
            break;
        }
        beta.push(bnorm);
        q = w.into_iter().map(|v| v / bnorm).collect();
    }
    let m = alpha.len();
    let mut t = DenseMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let ev = symmetric_eigenvalues(&t)?;
    Ok((ev[0], ev[m - 1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_operator_extremes() {
        let d: Vec<f64> = (1..=50).map(|i| i as f64).collect();
        let (lo, hi) = lanczos_extremes(50, 50, |x| Ok(x.iter().zip(&d).map(|(a, b)| a * b).collect())).unwrap();
        assert!((lo - 1.0).abs() < 1e-8 && (hi - 50.0).abs() < 1e-8);
    }
}
