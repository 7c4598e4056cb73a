//! Dense and sparse kernels used throughout the crate.

pub mod cholesky;
pub mod dense;
pub mod eigen;
pub mod lanczos;
pub mod qr;
pub mod sparse;
pub mod vector;

pub use cholesky::{dense_cholesky, LowerTriangular};
pub use dense::DenseMatrix;
pub use eigen::{nonsymmetric_eigen, symmetric_eigen, symmetric_eigenvalues, SymmetricEigen};
pub use sparse::SparseMatrix;
pub use vector::Vector;
