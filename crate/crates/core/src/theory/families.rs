//! Seeded generators for dynamics and contraction problems.
//!
//! The stable-rank bound is exact for coefficient sets whose `S` has the
//! structure its derivation relies on: shared eigenbases across the batch,
//! a single coefficient pair, or rank-one right factors. These generators
//! cover those cases, plus a generic coupled family kept for contrast.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{sym_eig, Matrix};
use crate::projector::Projector;
use crate::random::{gaussian_matrix, gaussian_vec, orthonormal_matrix, seeded, spd_from_eig, spd_matrix};

use super::contraction::ContractionSpec;
use super::dynamics::DynamicsSpec;

/// Fraction of `1/λ_max(S)` used as the step size.
pub const ETA_FRACTION: f64 = 0.5;

fn with_stable_eta(mut spec: DynamicsSpec, fraction: f64) -> Result<DynamicsSpec> {
    let lmax = *sym_eig(&spec.s_matrix()?)?.values.last().expect("non-empty");
    spec.eta = fraction / lmax;
    Ok(spec)
}

fn diag_in_basis(q: &Matrix, eigs: &[f64]) -> Matrix {
    spd_from_eig(q, eigs)
}

/// Shared eigenbases: `B_i = Z diag(b_i) Zᵀ`, `C_i = Y diag(c_i) Yᵀ`.
pub fn commuting_spec(seed: u64, steps: usize) -> Result<DynamicsSpec> {
    let mut rng = seeded(seed);
    let n_batch = rng.random_range(2..=4);
    let m = rng.random_range(2..=6);
    let n = rng.random_range(2..=6);
    let z = orthonormal_matrix(&mut rng, m, m);
    let y = orthonormal_matrix(&mut rng, n, n);
    let mut b = Vec::new();
    let mut c = Vec::new();
    for _ in 0..n_batch {
        let be: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..2.0)).collect();
        let ce: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        b.push(diag_in_basis(&z, &be));
        c.push(diag_in_basis(&y, &ce));
    }
    let a = (0..n_batch).map(|_| gaussian_matrix(&mut rng, m, n)).collect();
    let w0 = gaussian_matrix(&mut rng, m, n);
    with_stable_eta(DynamicsSpec { a, b, c, w0, eta: 0.0, steps, t0: 0 }, ETA_FRACTION)
}

/// A single random SPD pair, `S = C ⊗ B`.
pub fn single_pair_spec(seed: u64, steps: usize) -> Result<DynamicsSpec> {
    let mut rng = seeded(seed);
    let m = rng.random_range(2..=8);
    let n = rng.random_range(2..=8);
    let b = vec![spd_matrix(&mut rng, m, 0.1, 2.0)];
    let c = vec![spd_matrix(&mut rng, n, 0.1, 2.0)];
    let a = vec![gaussian_matrix(&mut rng, m, n)];
    let w0 = gaussian_matrix(&mut rng, m, n);
    with_stable_eta(DynamicsSpec { a, b, c, w0, eta: 0.0, steps, t0: 0 }, ETA_FRACTION)
}

/// Rank-one right factors `C_i = f_i f_iᵀ` with `N' = rank{f_i} < n` and
/// full-rank `B_i`. With `rank_one_targets` the targets are `A_i = a_i f_iᵀ`.
/// Returns the spec and `N'`.
pub fn low_rank_spec(seed: u64, steps: usize, rank_one_targets: bool) -> Result<(DynamicsSpec, usize)> {
    let mut rng = seeded(seed);
    let n_batch: usize = rng.random_range(2..=4);
    let m = rng.random_range(2..=6);
    let n = rng.random_range(n_batch + 1..=8);
    // Samples repeat a direction sometimes, so N' can be below N.
    let distinct = rng.random_range(1..=n_batch);
    let dirs: Vec<Vec<f64>> = (0..distinct).map(|_| gaussian_vec(&mut rng, n)).collect();
    let mut b = Vec::new();
    let mut c = Vec::new();
    let mut a = Vec::new();
    for i in 0..n_batch {
        let x = gaussian_matrix(&mut rng, m, m);
        let bi = x.matmul_t(&x)?.scale(1.0 / m as f64).add(&Matrix::identity(m).scale(0.1))?;
        b.push(bi.symmetrized()?);
        let f = &dirs[i % distinct];
        let scale = rng.random_range(0.5..1.5);
        let fi: Vec<f64> = f.iter().map(|v| v * scale).collect();
        c.push(Matrix::outer(&fi, &fi));
        if rank_one_targets {
            a.push(Matrix::outer(&gaussian_vec(&mut rng, m), &fi));
        } else {
            a.push(gaussian_matrix(&mut rng, m, n));
        }
    }
    let w0 = if rank_one_targets {
        Matrix::zeros(m, n)
    } else {
        gaussian_matrix(&mut rng, m, n)
    };
    let spec = with_stable_eta(DynamicsSpec { a, b, c, w0, eta: 0.0, steps, t0: 0 }, ETA_FRACTION)?;
    Ok((spec, distinct))
}

/// Shared eigenbases with a clear gap under the lowest mode, so that `𝒱1`
/// is one-dimensional and spanned by a Kronecker product of eigenvectors.
pub fn decomposable_spec(seed: u64, steps: usize) -> Result<DynamicsSpec> {
    let mut rng = seeded(seed);
    let n_batch = rng.random_range(1..=3);
    let m = rng.random_range(2..=6);
    let n = rng.random_range(2..=6);
    let z = orthonormal_matrix(&mut rng, m, m);
    let y = orthonormal_matrix(&mut rng, n, n);
    let mut b = Vec::new();
    let mut c = Vec::new();
    for _ in 0..n_batch {
        let mut be: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..2.0)).collect();
        let mut ce: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        be[0] = rng.random_range(0.05..0.1);
        ce[0] = rng.random_range(0.05..0.1);
        b.push(diag_in_basis(&z, &be));
        c.push(diag_in_basis(&y, &ce));
    }
    let a = (0..n_batch).map(|_| gaussian_matrix(&mut rng, m, n)).collect();
    let w0 = gaussian_matrix(&mut rng, m, n);
    with_stable_eta(DynamicsSpec { a, b, c, w0, eta: 0.0, steps, t0: 0 }, ETA_FRACTION)
}

/// Two coefficient pairs in shared eigenbases where the two lowest modes of
/// `S` sit at eigenvector pairs `(z_0, y_0)` and `(z_1, y_1)`, and `G_0` is
/// supported on exactly those two modes. The excess stable rank then decays
/// as an exact geometric sequence.
pub fn two_mode_spec(seed: u64, steps: usize) -> Result<DynamicsSpec> {
    let mut rng = seeded(seed);
    let m = rng.random_range(3..=6);
    let n = rng.random_range(3..=6);
    let z = orthonormal_matrix(&mut rng, m, m);
    let y = orthonormal_matrix(&mut rng, n, n);
    let mut jitter = |v: f64| v * rng.random_range(0.9..1.1);
    let mut tables = Vec::new();
    for (b_head, c_head) in [([0.1, 1.0], [1.0, 0.2]), ([1.0, 0.2], [0.1, 1.0])] {
        let be: Vec<f64> = (0..m).map(|j| jitter(if j < 2 { b_head[j] } else { 1.5 })).collect();
        let ce: Vec<f64> = (0..n).map(|k| jitter(if k < 2 { c_head[k] } else { 1.5 })).collect();
        tables.push((be, ce));
    }
    let b: Vec<Matrix> = tables.iter().map(|(be, _)| diag_in_basis(&z, be)).collect();
    let c: Vec<Matrix> = tables.iter().map(|(_, ce)| diag_in_basis(&y, ce)).collect();

    let c_par = rng.random_range(1.0..2.0);
    let c_perp = rng.random_range(0.3..0.9);
    let mut g0 = Matrix::outer(&z.column(0), &y.column(0)).scale(c_par);
    g0.axpy(c_perp, &Matrix::outer(&z.column(1), &y.column(1)))?;

    let w0 = gaussian_matrix(&mut rng, m, n);
    let a1 = gaussian_matrix(&mut rng, m, n);
    // Choose A_2 so that (1/2) Σ (A_i − B_i W0 C_i) = G_0.
    let mut a2 = g0.scale(2.0).sub(&a1)?;
    for (bi, ci) in b.iter().zip(&c) {
        a2.axpy(1.0, &bi.matmul(&w0)?.matmul(ci)?)?;
    }
    with_stable_eta(
        DynamicsSpec { a: vec![a1, a2], b, c, w0, eta: 0.0, steps, t0: 0 },
        ETA_FRACTION,
    )
}

/// Independent random SPD coefficients per sample, no shared structure.
pub fn generic_coupled_spec(seed: u64, steps: usize) -> Result<DynamicsSpec> {
    let mut rng = seeded(seed);
    let n_batch = rng.random_range(3..=4);
    let m = rng.random_range(3..=5);
    let n = rng.random_range(3..=5);
    let b = (0..n_batch).map(|_| spd_matrix(&mut rng, m, 0.05, 2.0)).collect();
    let c = (0..n_batch).map(|_| spd_matrix(&mut rng, n, 0.05, 2.0)).collect();
    let a = (0..n_batch).map(|_| gaussian_matrix(&mut rng, m, n)).collect();
    let w0 = gaussian_matrix(&mut rng, m, n);
    with_stable_eta(DynamicsSpec { a, b, c, w0, eta: 0.0, steps, t0: 0 }, ETA_FRACTION)
}

/// The bound suite: specs from the structured families above.
pub fn bound_suite(count_per_family: usize, steps: usize) -> Result<Vec<(String, DynamicsSpec)>> {
    let mut out = Vec::new();
    for k in 0..count_per_family as u64 {
        out.push((format!("commuting/{k}"), commuting_spec(1000 + k, steps)?));
        out.push((format!("single-pair/{k}"), single_pair_spec(2000 + k, steps)?));
        out.push((format!("low-rank/{k}"), low_rank_spec(3000 + k, steps, false)?.0));
    }
    Ok(out)
}

/// Contraction instance: SPD coefficients with spectra in `[0.2, 1]`, `P`
/// and `Q` spanning the top-`r` eigenvectors of the mean `B` and mean `C`.
pub fn contraction_instance(seed: u64, rank: usize, eta: f64, steps: usize) -> Result<ContractionSpec> {
    let mut rng = seeded(seed);
    let n_batch = rng.random_range(1..=3);
    let m = rng.random_range(4..=6);
    let n = rng.random_range(4..=6);
    let b: Vec<Matrix> = (0..n_batch).map(|_| spd_matrix(&mut rng, m, 0.2, 1.0)).collect();
    let c: Vec<Matrix> = (0..n_batch).map(|_| spd_matrix(&mut rng, n, 0.2, 1.0)).collect();
    let a = (0..n_batch).map(|_| gaussian_matrix(&mut rng, m, n)).collect();
    let w0 = gaussian_matrix(&mut rng, m, n);
    let top = |mats: &[Matrix]| -> Result<Matrix> {
        let mut mean = Matrix::zeros(mats[0].rows(), mats[0].cols());
        for x in mats {
            mean.axpy(1.0 / mats.len() as f64, x)?;
        }
        let eig = sym_eig(&mean)?;
        let d = mean.rows();
        Ok(Matrix::from_fn(d, rank, |i, j| eig.vectors.get(i, d - 1 - j)))
    };
    let projector = Projector::from_factors(Some(top(&b)?), Some(top(&c)?))?;
    Ok(ContractionSpec { a, b, c, w0, projector, eta, steps })
}

/// Named generator, for config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Commuting,
    SinglePair,
    LowRank,
    Decomposable,
    TwoMode,
    GenericCoupled,
}

impl Family {
    pub fn build(self, seed: u64, steps: usize) -> Result<DynamicsSpec> {
        match self {
            Family::Commuting => commuting_spec(seed, steps),
            Family::SinglePair => single_pair_spec(seed, steps),
            Family::LowRank => Ok(low_rank_spec(seed, steps, false)?.0),
            Family::Decomposable => decomposable_spec(seed, steps),
            Family::TwoMode => two_mode_spec(seed, steps),
            Family::GenericCoupled => generic_coupled_spec(seed, steps),
        }
    }
}
