//! Test-problem generators.
//!
//! Every generator sets the right-hand side to K·𝟙 so that the exact
//! solution is the all-ones vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::factor_dense;
use crate::linalg::dense::DenseMatrix;
use crate::linalg::eigen::{spd_power, symmetric_eigen};
use crate::linalg::sparse::SparseMatrix;
use crate::precond::ApproxBlocks;
use crate::system::{BlockSystem, HatBlockSystem};

/// Problem family and size parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ProblemSpec {
    StokesModified { p: usize },
    ImageRestoration { p: usize },
    PoissonControl { grid_pow: u32, beta: f64 },
    FdStokesSubstitute { cells: usize },
    Random { n: usize, m: usize, l: usize, seed: u64 },
}

impl ProblemSpec {
    /// Generates the system in the standard layout.
    pub fn generate(&self) -> Result<BlockSystem> {
        match *self {
            ProblemSpec::StokesModified { p } => stokes_modified(p),
            ProblemSpec::ImageRestoration { p } => image_restoration(p),
            ProblemSpec::PoissonControl { grid_pow, beta } => poisson_control(grid_pow, beta)?.to_standard(),
            ProblemSpec::FdStokesSubstitute { cells } => fd_stokes_substitute(cells)?.to_standard(),
            ProblemSpec::Random { n, m, l, seed } => random_valid(n, m, l, seed),
        }
    }
}

fn require_p(p: usize) -> Result<()> {
    if p < 2 {
        return Err(Error::InvalidArgument(format!("size parameter p must be at least 2, got {p}")));
    }
    Ok(())
}

/// The modified Stokes-type system with D = 0.
///
/// T = (1/h²)·tridiag(−1, 2, −1), F = (1/h)·tridiag(0, 1, −1),
/// E = diag(1, p+1, …, p²−p+1), h = 1/(p+1);
/// A = blockdiag(I⊗T + T⊗I, I⊗T + T⊗I), B = (I⊗F, F⊗I), C = E⊗F.
pub fn stokes_modified(p: usize) -> Result<BlockSystem> {
    require_p(p)?;
    let h = 1.0 / (p as f64 + 1.0);
    let t = SparseMatrix::tridiag(p, -1.0, 2.0, -1.0).scaled(1.0 / (h * h));
    let f = SparseMatrix::tridiag(p, 0.0, 1.0, -1.0).scaled(1.0 / h);
    let e = SparseMatrix::from_diag(&(0..p).map(|k| (1 + k * p) as f64).collect::<Vec<_>>());
    let i = SparseMatrix::identity(p);
    let lap = i.kron(&t)?.add(&t.kron(&i)?)?;
    let a = SparseMatrix::block_diag(&[&lap, &lap])?;
    let b = SparseMatrix::from_blocks(&[p * p], &[p * p, p * p], &[vec![Some(&i.kron(&f)?), Some(&f.kron(&i)?)]])?;
    let c = e.kron(&f)?;
    let d = SparseMatrix::zeros(p * p, p * p);
    BlockSystem::with_unit_solution(a, b, c, d)
}

/// Blur weight w_ij = exp(−2((i/3)² + (j/3)²)) with 1-based indices.
pub fn blur_weight(i: usize, j: usize) -> f64 {
    let (x, y) = (i as f64 / 3.0, j as f64 / 3.0);
    (-2.0 * (x * x + y * y)).exp()
}

/// The image-restoration-type system with D = 0.
///
/// With p̃ = p² and p̂ = p(p+1): A = blockdiag(2WᵀW + I, D₁, D₂),
/// B = (E, −I, −I), C = Eᵀ, where E = (Ê⊗I; I⊗Ê) and Ê = bidiag(2, −1) of size p×(p+1).
pub fn image_restoration(p: usize) -> Result<BlockSystem> {
    require_p(p)?;
    let pt = p * p;
    let ph = p * (p + 1);
    // W is rank one and its entries underflow to zero quickly; only nonzeros are stored
    let mut w_trip = Vec::new();
    for i in 1..=ph {
        if blur_weight(i, 1) == 0.0 {
            break;
        }
        for j in 1..=ph {
            let w = blur_weight(i, j);
            if w == 0.0 {
                break;
            }
            w_trip.push((i - 1, j - 1, w));
        }
    }
    let w = SparseMatrix::from_triplets(ph, ph, &w_trip)?;
    let wtw = w.transpose().matmul(&w)?;
    let a11 = wtw.add_scaled(2.0, &SparseMatrix::identity(ph), 1.0)?;
    let d1: Vec<f64> = (1..=2 * pt)
        .map(|j| if j <= pt { 1.0 } else { 1e-5 * ((j - pt) as f64).powi(2) })
        .collect();
    let d2: Vec<f64> = (1..=2 * pt).map(|j| 1e-5 * ((j + pt) as f64).powi(2)).collect();
    let a = SparseMatrix::block_diag(&[&a11, &SparseMatrix::from_diag(&d1), &SparseMatrix::from_diag(&d2)])?;

    let e_hat = e_hat(p)?;
    let ip = SparseMatrix::identity(p);
    let top = e_hat.kron(&ip)?;
    let bottom = ip.kron(&e_hat)?;
    let e = SparseMatrix::from_blocks(&[pt, pt], &[ph], &[vec![Some(&top)], vec![Some(&bottom)]])?;
    let neg_i = SparseMatrix::identity(2 * pt).scaled(-1.0);
    let b = SparseMatrix::from_blocks(&[2 * pt], &[ph, 2 * pt, 2 * pt], &[vec![Some(&e), Some(&neg_i), Some(&neg_i)]])?;
    let c = e.transpose();
    let d = SparseMatrix::zeros(ph, ph);
    BlockSystem::with_unit_solution(a, b, c, d)
}

/// Ê: p×(p+1) with 2 on the diagonal and −1 on the superdiagonal.
pub fn e_hat(p: usize) -> Result<SparseMatrix> {
    let trip: Vec<(usize, usize, f64)> = (0..p).flat_map(|i| [(i, i, 2.0), (i, i + 1, -1.0)]).collect();
    SparseMatrix::from_triplets(p, p + 1, &trip)
}

/// Distributed Poisson control on the unit square with bilinear elements.
///
/// The (2^pow + 1)² grid carries homogeneous Dirichlet conditions, so the
/// unknowns live on the (2^pow − 1)² interior nodes. Hat-layout blocks:
/// A = M, D = βM, B = K, C = −M with M the mass and K the stiffness matrix.
pub fn poisson_control(grid_pow: u32, beta: f64) -> Result<HatBlockSystem> {
    if !(1..=10).contains(&grid_pow) {
        return Err(Error::InvalidArgument(format!("grid_pow must be in 1..=10, got {grid_pow}")));
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    let (mass, stiff) = q1_matrices(1usize << grid_pow);
    let d = mass.scaled(beta);
    let c = mass.scaled(-1.0);
    HatBlockSystem::with_unit_solution(mass, stiff, c, d)
}

/// Interior mass and stiffness matrices of bilinear elements on a uniform
/// grid with `cells` cells per direction.
pub fn q1_matrices(cells: usize) -> (SparseMatrix, SparseMatrix) {
    let h = 1.0 / cells as f64;
    let ni = cells - 1;
    let mloc = [[4.0, 2.0, 1.0, 2.0], [2.0, 4.0, 2.0, 1.0], [1.0, 2.0, 4.0, 2.0], [2.0, 1.0, 2.0, 4.0]];
    let kloc = [
        [4.0, -1.0, -2.0, -1.0],
        [-1.0, 4.0, -1.0, -2.0],
        [-2.0, -1.0, 4.0, -1.0],
        [-1.0, -2.0, -1.0, 4.0],
    ];
    let mut mt = Vec::new();
    let mut kt = Vec::new();
    // interior index of grid node (i, j), or None on the boundary
    let idx = |i: usize, j: usize| -> Option<usize> {
        (i >= 1 && i < cells && j >= 1 && j < cells).then(|| (j - 1) * ni + (i - 1))
    };
    for ey in 0..cells {
        for ex in 0..cells {
            let nodes = [idx(ex, ey), idx(ex + 1, ey), idx(ex + 1, ey + 1), idx(ex, ey + 1)];
            for (a, na) in nodes.iter().enumerate() {
                let Some(ra) = na else { continue };
                for (b, nb) in nodes.iter().enumerate() {
                    let Some(cb) = nb else { continue };
                    mt.push((*ra, *cb, h * h / 36.0 * mloc[a][b]));
                    kt.push((*ra, *cb, kloc[a][b] / 6.0));
                }
            }
        }
    }
    (
        SparseMatrix::from_triplets(ni * ni, ni * ni, &mt).expect("indices in range"),
        SparseMatrix::from_triplets(ni * ni, ni * ni, &kt).expect("indices in range"),
    )
}

/// Marker-and-cell finite-difference Stokes problem on an N×N cell grid.
///
/// Walls are no-slip except the right boundary, which is a natural outflow
/// for the horizontal velocity. Hat-layout blocks: A = Laplacian on the
/// horizontal velocity faces, D = Laplacian on the interior vertical
/// velocity faces, B = horizontal divergence (square, lower bidiagonal per
/// row of cells) and C = (vertical divergence)ᵀ.
pub fn fd_stokes_substitute(cells: usize) -> Result<HatBlockSystem> {
    if cells < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 cells per direction, got {cells}")));
    }
    let nc = cells;
    let h = 1.0 / nc as f64;
    let s = 1.0 / (h * h);
    // Dirichlet at the left end, Neumann at the right end
    let mut t_dn = SparseMatrix::tridiag(nc, -1.0, 2.0, -1.0).to_dense();
    t_dn[(nc - 1, nc - 1)] = 1.0;
    let t_dn = SparseMatrix::from_dense(&t_dn, 0.0).scaled(s);
    let t_dd = SparseMatrix::tridiag(nc, -1.0, 2.0, -1.0).scaled(s);
    let t_face = SparseMatrix::tridiag(nc - 1, -1.0, 2.0, -1.0).scaled(s);
    let i_n = SparseMatrix::identity(nc);
    let i_f = SparseMatrix::identity(nc - 1);

    // horizontal faces (i, j): x index inner, y index outer
    let a = i_n.kron(&t_dn)?.add(&t_dd.kron(&i_n)?)?;
    let d = i_f.kron(&t_dn)?.add(&t_face.kron(&i_n)?)?;
    let dx = SparseMatrix::tridiag(nc, -1.0, 1.0, 0.0).scaled(1.0 / h);
    let b = i_n.kron(&dx)?;
    let mut dy_trip = Vec::new();
    for j in 0..nc {
        if j < nc - 1 {
            dy_trip.push((j, j, 1.0 / h));
        }
        if j >= 1 {
            dy_trip.push((j, j - 1, -1.0 / h));
        }
    }
    let dy = SparseMatrix::from_triplets(nc, nc - 1, &dy_trip)?;
    let b2 = dy.kron(&i_n)?;
    let c = b2.transpose();
    HatBlockSystem::with_unit_solution(a, b, c, d)
}

/// Random system satisfying the structural assumptions, deterministic in `seed`.
///
/// A = RRᵀ + I, B random (full row rank with probability one), D = QQᵀ
/// with Q of random rank, and C random. When l > m the rank of D is forced
/// to be full so that the system stays uniquely solvable.
pub fn random_valid(n: usize, m: usize, l: usize, seed: u64) -> Result<BlockSystem> {
    if l == 0 || m == 0 || n == 0 {
        return Err(Error::NotSupported("empty blocks are not supported".into()));
    }
    if m > n {
        return Err(Error::InvalidArgument(format!("m = {m} exceeds n = {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = random_dense(&mut rng, n, n);
    let mut a = r.matmul_transpose(&r)?.scaled(1.0 / n as f64);
    a.add_identity(1.0);
    let b = random_dense(&mut rng, m, n);
    let c = random_dense(&mut rng, l, m);
    let rank = if l > m { l } else { rng.gen_range(0..=l) };
    let q = random_dense(&mut rng, l, rank);
    let d = q.matmul_transpose(&q)?;
    BlockSystem::with_unit_solution(
        SparseMatrix::from_dense(&a.symmetrized(), 0.0),
        SparseMatrix::from_dense(&b, 0.0),
        SparseMatrix::from_dense(&c, 0.0),
        SparseMatrix::from_dense(&d.symmetrized(), 0.0),
    )
}

/// Approximation blocks whose pencils have prescribed spectra.
///
/// The eigenvalues of M_A⁻¹A are spread over `mu`, those of Ŝ⁻¹S over `nu`
/// and those of M̂_S⁻¹(D + CŜ⁻¹Cᵀ) over `theta`, both ends included. Dense,
/// so desk scale only.
pub fn random_blocks(
    sys: &BlockSystem,
    seed: u64,
    mu: (f64, f64),
    nu: (f64, f64),
    theta: (f64, f64),
) -> Result<ApproxBlocks> {
    for (lo, hi) in [mu, nu, theta] {
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad spectral range ({lo}, {hi})")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = sys.a().to_dense();
    let m_a = prescribed_pencil(&mut rng, &a, mu)?;
    let s = crate::precond::schur_dense(&factor_dense(&a)?, sys.bt())?;
    let s_hat = prescribed_pencil(&mut rng, &s, nu)?;
    let csc = crate::precond::schur_dense(&factor_dense(&s_hat)?, sys.ct())?;
    let t = csc.add(&sys.d().to_dense())?;
    let ms_hat = prescribed_pencil(&mut rng, &t, theta)?;
    ApproxBlocks::from_matrices(&m_a, &s_hat, &ms_hat)
}

// T^{1/2} Q diag(1/λ) Qᵀ T^{1/2}, so that (result)⁻¹T has eigenvalues λ.
fn prescribed_pencil(rng: &mut impl Rng, t: &DenseMatrix, (lo, hi): (f64, f64)) -> Result<DenseMatrix> {
    let n = t.nrows();
    let r = random_dense(rng, n, n);
    let q = symmetric_eigen(&r.add(&r.transpose())?)?.vectors;
    let inv: Vec<f64> = (0..n)
        .map(|i| {
            let lam = match i {
                0 => lo,
                _ if i + 1 == n => hi,
                _ => rng.gen_range(lo..=hi),
            };
            1.0 / lam
        })
        .collect();
    let mut qd = q.clone();
    qd.scale_cols(&inv);
    let core = qd.matmul_transpose(&q)?;
    let half = spd_power(t, 0.5)?;
    Ok(half.matmul(&core)?.matmul(&half)?.symmetrized())
}

pub(crate) fn random_dense(rng: &mut impl Rng, rows: usize, cols: usize) -> DenseMatrix {
    let vals = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    DenseMatrix::from_row_major(rows, cols, vals).expect("sizes match")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stokes_dims_and_spot_entries() {
        let s = stokes_modified(32).unwrap();
        assert_eq!(s.dims(), (2048, 1024, 1024));
        let s = stokes_modified(2).unwrap();
        // T_2 = 9·[[2,−1],[−1,2]]; A[0,0] = 2·T[0,0] = 36
        assert_eq!(s.a().get(0, 0), 36.0);
        assert_eq!(s.a().get(0, 1), -9.0);
        // F_2 = 3·[[1,−1],[0,1]], so (I⊗F)[0,1] = −3
        assert_eq!(s.b().get(0, 1), -3.0);
        // C = E⊗F with E = diag(1, 3)
        assert_eq!(s.c().get(2, 2), 9.0);
        assert_eq!(s.c().get(2, 3), -9.0);
        assert_eq!(s.d().nnz(), 0);
    }

    #[test]
    fn stokes_validates_small_p() {
        for p in 2..=8 {
            let rep = stokes_modified(p).unwrap().validate();
            assert!(rep.passed, "p={p}: {:?}", rep.failures);
        }
    }

    #[test]
    fn image_restoration_dims_and_entries() {
        let s = image_restoration(40).unwrap();
        assert_eq!(s.dims(), (8040, 3200, 1640));
        let e = e_hat(2).unwrap().to_dense();
        assert_eq!(e, DenseMatrix::from_rows(&[&[2.0, -1.0, 0.0], &[0.0, 2.0, -1.0]]));
        let s = image_restoration(3).unwrap();
        let (pt, ph) = (9, 12);
        // D1 starts right after the 2WᵀW + I block
        assert_eq!(s.a().get(ph, ph), 1.0);
        assert_eq!(s.a().get(ph + pt, ph + pt), 1e-5);
        assert_eq!(s.a().get(ph + 2 * pt, ph + 2 * pt), 1e-5 * 100.0);
        let wsum: f64 = (1..=ph).map(|k| blur_weight(k, 1) * blur_weight(k, 2)).sum();
        assert!((s.a().get(0, 1) - 2.0 * wsum).abs() < 1e-15);
        assert!(s.validate().passed);
    }

    #[test]
    fn poisson_mass_positive() {
        let hat = poisson_control(3, 1e-2).unwrap();
        let ones = vec![1.0; hat.a.nrows()];
        let rows = hat.a.spmv(&ones).unwrap();
        assert!(rows.iter().all(|&v| v > 0.0));
        // a node away from the boundary has row sum h²
        let h = 1.0 / 8.0;
        let center = 3 * 7 + 3;
        assert!((rows[center] - h * h).abs() < 1e-15);
        let sys = hat.to_standard().unwrap();
        assert!(sys.validate().passed, "{:?}", sys.validate().failures);
    }

    #[test]
    fn fd_stokes_validates() {
        let hat = fd_stokes_substitute(6).unwrap();
        let sys = hat.to_standard().unwrap();
        assert_eq!(sys.dims(), (36, 36, 30));
        let rep = sys.validate();
        assert!(rep.passed, "{:?}", rep.failures);
        assert!(rep.d_spd);
    }

    #[test]
    fn random_is_deterministic_and_valid() {
        let a = random_valid(12, 5, 4, 7).unwrap();
        let b = random_valid(12, 5, 4, 7).unwrap();
        assert_eq!(a.assemble_monolithic(), b.assemble_monolithic());
        for seed in 0..200 {
            assert!(random_valid(12, 5, 4, seed).unwrap().validate().passed, "seed {seed}");
        }
        assert!(matches!(random_valid(4, 2, 0, 1), Err(Error::NotSupported(_))));
    }
}
