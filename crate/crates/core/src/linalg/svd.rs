use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;
const ORTHO_TOL: f64 = 1e-15;

/// Thin SVD `A = U diag(S) Vᵀ` with `k = min(m, n)` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    /// `U diag(S) Vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let us = Matrix::from_fn(self.u.rows(), self.s.len(), |i, j| self.u.get(i, j) * self.s[j]);
        us.matmul_t(&self.v).expect("svd factors are shape-consistent")
    }
}

/// Thin SVD by one-sided Jacobi rotations.
///
/// Sign convention: in every column of `U` the entry of largest magnitude
/// (first index on ties) is non-negative; `V` is flipped to match.
pub fn svd_thin(a: &Matrix) -> Result<SvdResult> {
    if !a.is_finite() {
        return Err(Error::InvalidInput("svd_thin: non-finite entry".into()));
    }
    let (u, s, v) = if a.rows() >= a.cols() {
        let (u, s, v) = jacobi_tall(a);
        (u, s, v)
    } else {
        let (v, s, u) = jacobi_tall(&a.transpose());
        (u, s, v)
    };
    let mut out = SvdResult { u, s, v };
    fix_signs(&mut out);
    Ok(out)
}

/// One-sided Jacobi for `m >= n`. Returns `(U m×n, S, V n×n)`.
fn jacobi_tall(a: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let (m, n) = a.shape();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= ORTHO_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut cols, p, q, c, s);
                rotate_pair(&mut vcols, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps the original column order among equal values.
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap_or(std::cmp::Ordering::Equal));

    let s_max = norms.iter().cloned().fold(0.0, f64::max);
    let tiny = s_max * (m.max(n) as f64) * f64::EPSILON;

    let mut s = Vec::with_capacity(n);
    let mut ucols: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
    let mut v = Matrix::zeros(n, n);
    for (k, &j) in order.iter().enumerate() {
        let sj = norms[j];
        v.set_column(k, &vcols[j]);
        if sj > tiny && sj > 0.0 {
            s.push(sj);
            ucols.push(Some(cols[j].iter().map(|x| x / sj).collect()));
        } else {
            s.push(if sj > 0.0 { sj } else { 0.0 });
            ucols.push(None);
        }
    }

    let ucols = complete_orthonormal(m, ucols);
    let mut u = Matrix::zeros(m, n);
    for (k, col) in ucols.iter().enumerate() {
        u.set_column(k, col);
    }
    (u, s, v)
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let cp = &mut lo[p];
    let cq = &mut hi[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fills missing columns with canonical vectors orthogonalised against the
/// rest, then runs one modified Gram-Schmidt pass over everything.
fn complete_orthonormal(m: usize, cols: Vec<Option<Vec<f64>>>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(cols.len());
    let present: Vec<Vec<f64>> = cols.iter().flatten().cloned().collect();
    let mut next_canonical = 0usize;
    let mut fillers: Vec<Vec<f64>> = Vec::new();
    let missing = cols.iter().filter(|c| c.is_none()).count();
    while fillers.len() < missing && next_canonical < m {
        let mut e = vec![0.0; m];
        e[next_canonical] = 1.0;
        next_canonical += 1;
        for _ in 0..2 {
            for b in present.iter().chain(fillers.iter()) {
                let proj = dot(&e, b);
                for (x, y) in e.iter_mut().zip(b) {
                    *x -= proj * y;
                }
            }
        }
        let nrm = dot(&e, &e).sqrt();
        if nrm > 1e-8 {
            e.iter_mut().for_each(|x| *x /= nrm);
            fillers.push(e);
        }
    }
    let mut fill_iter = fillers.into_iter();
    for c in cols {
        match c {
            Some(c) => out.push(c),
            None => out.push(fill_iter.next().expect("canonical completion exhausted")),
        }
    }
    for k in 0..out.len() {
        let (done, rest) = out.split_at_mut(k);
        let col = &mut rest[0];
        for b in done.iter() {
            let proj = dot(col, b);
            for (x, y) in col.iter_mut().zip(b) {
                *x -= proj * y;
            }
        }
        let nrm = dot(col, col).sqrt();
        col.iter_mut().for_each(|x| *x /= nrm);
    }
    out
}

fn fix_signs(svd: &mut SvdResult) {
    for j in 0..svd.u.cols() {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for i in 0..svd.u.rows() {
            let a = svd.u.get(i, j).abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if svd.u.get(best, j) < 0.0 {
            for i in 0..svd.u.rows() {
                svd.u[(i, j)] = -svd.u.get(i, j);
            }
            for i in 0..svd.v.rows() {
                svd.v[(i, j)] = -svd.v.get(i, j);
            }
        }
    }
}
