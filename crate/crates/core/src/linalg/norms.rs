use super::matrix::Matrix;
use super::svd::svd_thin;
use crate::error::{Error, Result};

/// Largest singular value.
pub fn spectral_norm(a: &Matrix) -> Result<f64> {
    Ok(svd_thin(a)?.s[0])
}

/// `‖A‖_F² / ‖A‖_2²`. Undefined for the zero matrix.
pub fn stable_rank(a: &Matrix) -> Result<f64> {
    let fro_sq = a.fro_norm_sq();
    if fro_sq == 0.0 {
        return Err(Error::UndefinedStableRank);
    }
    let s1 = spectral_norm(a)?;
    Ok(fro_sq / (s1 * s1))
}

/// Count of singular values above `rel_tol * s_1`.
pub fn numerical_rank(a: &Matrix, rel_tol: f64) -> Result<usize> {
    let s = svd_thin(a)?.s;
    let s1 = s[0];
    if s1 == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&x| x > rel_tol * s1).count())
}
