//! Householder QR with column pivoting, used for numerical rank checks.

use crate::linalg::dense::DenseMatrix;

/// Absolute values of the diagonal of R in A·P = Q·R, in pivot order.
pub fn pivoted_r_diagonal(a: &DenseMatrix) -> Vec<f64> {
    let (m, n) = (a.nrows(), a.ncols());
    // column-major working copy so that Householder updates stream through memory
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
    let steps = m.min(n);
    let mut rdiag = Vec::with_capacity(steps);
    for k in 0..steps {
        let (best, _) = norms[k..]
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        let p = k + best;
        cols.swap(k, p);
        norms.swap(k, p);
        let x = &cols[k][k..];
        let alpha = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if alpha == 0.0 {
            rdiag.push(0.0);
            continue;
        }
        let sign = if x[0] >= 0.0 { 1.0 } else { -1.0 };
        let mut v = x.to_vec();
        v[0] += sign * alpha;
        let vnorm2: f64 = v.iter().map(|t| t * t).sum();
        rdiag.push(alpha);
        for col in cols.iter_mut().skip(k + 1) {
            let tail = &mut col[k..];
            let s: f64 = tail.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() * 2.0 / vnorm2;
            for (t, vi) in tail.iter_mut().zip(&v) {
                *t -= s * vi;
            }
        }
        for (j, col) in cols.iter().enumerate().skip(k + 1) {
            // recompute rather than downdate to avoid cancellation
            norms[j] = col[k + 1..].iter().map(|t| t * t).sum();
        }
    }
    rdiag
}

/// Number of diagonal entries of R exceeding `rel_tol` times the largest.
pub fn numerical_rank(a: &DenseMatrix, rel_tol: f64) -> usize {
    let r = pivoted_r_diagonal(a);
    let top = r.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return 0;
    }
    r.iter().filter(|&&v| v > rel_tol * top).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_of_simple_matrices() {
        assert_eq!(numerical_rank(&DenseMatrix::identity(4), 1e-10), 4);
        let a = DenseMatrix::from_rows(&[&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0], &[1.0, 0.0, 1.0]]);
        assert_eq!(numerical_rank(&a, 1e-10), 2);
        assert_eq!(numerical_rank(&DenseMatrix::zeros(3, 2), 1e-10), 0);
        let tall = DenseMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        assert_eq!(numerical_rank(&tall, 1e-10), 2);
    }
}
