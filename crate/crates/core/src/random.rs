//! Seeded generators for test problems and model initialisation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{svd_thin, Matrix};

/// The generator used everywhere in the toolkit.
pub type Prng = ChaCha8Rng;

/// Identifier written into run metadata.
pub const PRNG_NAME: &str = "ChaCha8Rng (rand_chacha 0.9, seed_from_u64)";

pub fn seeded(seed: u64) -> Prng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn uniform_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
}

/// Column-orthonormal `rows × cols` matrix (`cols <= rows`).
pub fn orthonormal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let g = gaussian_matrix(rng, rows, cols);
    svd_thin(&g).expect("gaussian matrix is finite").u
}

/// Symmetric positive definite `n × n` matrix with eigenvalues drawn from
/// `[lo, hi]`.
pub fn spd_matrix<R: Rng + ?Sized>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Matrix {
    let q = orthonormal_matrix(rng, n, n);
    let eigs: Vec<f64> = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
    spd_from_eig(&q, &eigs)
}

/// `Q diag(eigs) Qᵀ`, symmetrised exactly.
pub fn spd_from_eig(q: &Matrix, eigs: &[f64]) -> Matrix {
    let qd = Matrix::from_fn(q.rows(), eigs.len(), |i, j| q.get(i, j) * eigs[j]);
    let out = qd.matmul_t(&q.leading_columns(eigs.len())).expect("shapes agree");
    out.symmetrized().expect("square")
}
