//! Inexact block factorization preconditioners for three-by-three block
//! saddle-point systems, together with eigenvalue bounds for the
//! preconditioned matrices.

pub mod error;
pub mod factor;
pub mod io;
pub mod krylov;
pub mod linalg;
pub mod precond;
pub mod problems;
pub mod spectral;
pub mod system;

pub use error::{Error, Result};
