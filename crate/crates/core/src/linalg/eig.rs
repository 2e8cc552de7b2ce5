use super::matrix::Matrix;
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;
const OFF_TOL: f64 = 1e-12;

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct EigResult {
    pub values: Vec<f64>,
    /// Column `i` is the eigenvector for `values[i]`.
    pub vectors: Matrix,
}

/// Cyclic Jacobi on `(S + Sᵀ)/2`.
///
/// Stops once the off-diagonal Frobenius norm drops to `1e-12 * ‖S‖_F` or
/// after 100 sweeps. Eigenvectors follow the same sign convention as
/// `svd_thin`.
pub fn sym_eig(s: &Matrix) -> Result<EigResult> {
    if !s.is_finite() {
        return Err(Error::InvalidInput("sym_eig: non-finite entry".into()));
    }
    let mut a = s.symmetrized()?;
    let n = a.rows();
    let mut v = Matrix::identity(n);
    let target = OFF_TOL * a.fro_norm();

    for _ in 0..MAX_SWEEPS {
        if off_diag_norm(&a) <= target {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = if theta.is_infinite() {
                    0.0
                } else {
                    let sgn = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sgn / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }

    let diag: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).unwrap_or(std::cmp::Ordering::Equal));

    let mut vectors = Matrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (k, &j) in order.iter().enumerate() {
        values.push(diag[j]);
        let mut col = v.column(j);
        let mut idx = 0;
        for i in 1..n {
            if col[i].abs() > col[idx].abs() {
                idx = i;
            }
        }
        if col[idx] < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        vectors.set_column(k, &col);
    }
    Ok(EigResult { values, vectors })
}

fn off_diag_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a.get(i, j) * a.get(i, j);
            }
        }
    }
    acc.sqrt()
}
