use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Default cap on either dimension of a Kronecker product.
pub const KRON_DIM_CAP: usize = 4096;

/// Kronecker product `B ⊗ C` under the default dimension cap.
pub fn kron(b: &Matrix, c: &Matrix) -> Result<Matrix> {
    kron_with_cap(b, c, KRON_DIM_CAP)
}

pub fn kron_with_cap(b: &Matrix, c: &Matrix, cap: usize) -> Result<Matrix> {
    let rows = b.rows().checked_mul(c.rows());
    let cols = b.cols().checked_mul(c.cols());
    match (rows, cols) {
        (Some(r), Some(k)) if r <= cap && k <= cap => {
            let (cr, cc) = c.shape();
            Ok(Matrix::from_fn(r, k, |i, j| {
                b.get(i / cr, j / cc) * c.get(i % cr, j % cc)
            }))
        }
        _ => Err(Error::SizeLimit {
            rows: rows.unwrap_or(usize::MAX),
            cols: cols.unwrap_or(usize::MAX),
            cap,
        }),
    }
}

/// Column-major stacking of `a` into a vector of length `rows * cols`.
pub fn vec(a: &Matrix) -> Vec<f64> {
    let (m, n) = a.shape();
    let mut out = Vec::with_capacity(m * n);
    for j in 0..n {
        for i in 0..m {
            out.push(a.get(i, j));
        }
    }
    out
}

/// Inverse of [`vec`].
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> Result<Matrix> {
    if rows == 0 || cols == 0 || v.len() != rows * cols {
        return Err(Error::InvalidInput(format!(
            "unvec: length {} does not match {rows}x{cols}",
            v.len()
        )));
    }
    let data = Matrix::from_fn(rows, cols, |i, j| v[j * rows + i]).into_vec();
    Matrix::new(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{gaussian_matrix, seeded};

    #[test]
    fn small_products() {
        let i2 = Matrix::identity(2);
        assert_eq!(kron(&i2, &i2).unwrap(), Matrix::identity(4));
        let two = Matrix::from_rows(&[&[2.0]]).unwrap();
        let three = Matrix::from_rows(&[&[3.0]]).unwrap();
        assert_eq!(kron(&two, &three).unwrap().as_slice(), &[6.0]);
    }

    #[test]
    fn block_layout() {
        let b = Matrix::from_rows(&[&[1.0, 2.0]]).unwrap();
        let c = Matrix::from_rows(&[&[1.0], &[10.0]]).unwrap();
        let k = kron(&b, &c).unwrap();
        assert_eq!(k.shape(), (2, 2));
        assert_eq!(k.as_slice(), &[1.0, 2.0, 10.0, 20.0]);
    }

    #[test]
    fn cap_is_enforced() {
        let b = Matrix::identity(3);
        let c = Matrix::identity(3);
        assert!(matches!(
            kron_with_cap(&b, &c, 8),
            Err(Error::SizeLimit { rows: 9, cols: 9, cap: 8 })
        ));
        let wide = Matrix::zeros(1, 65);
        assert!(kron(&wide, &wide).is_err());
    }

    #[test]
    fn vec_is_column_major() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(vec(&a), vec![1.0, 3.0, 2.0, 4.0]);
        let mut rng = seeded(5);
        let a = gaussian_matrix(&mut rng, 3, 2);
        assert_eq!(unvec(&vec(&a), 3, 2).unwrap(), a);
        assert!(unvec(&[1.0, 2.0, 3.0], 2, 2).is_err());
    }

    #[test]
    fn vec_identity() {
        let mut rng = seeded(9);
        let b = gaussian_matrix(&mut rng, 2, 2);
        let w = gaussian_matrix(&mut rng, 2, 2);
        let c = gaussian_matrix(&mut rng, 2, 2);
        let lhs = vec(&b.matmul(&w).unwrap().matmul(&c).unwrap());
        let rhs = kron(&c.transpose(), &b).unwrap().matvec(&vec(&w)).unwrap();
        for (x, y) in lhs.iter().zip(&rhs) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}
