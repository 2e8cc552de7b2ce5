//! Dense linear algebra: matrices, thin SVD, symmetric eigensolver,
//! Kronecker/vec helpers and norms.

mod eig;
mod kron;
mod matrix;
mod norms;
mod svd;

pub use eig::{sym_eig, EigResult};
pub use kron::{kron, kron_with_cap, unvec, vec, KRON_DIM_CAP};
pub use matrix::{dot, norm2, Matrix};
pub use norms::{numerical_rank, spectral_norm, stable_rank};
pub use svd::{svd_thin, SvdResult};
