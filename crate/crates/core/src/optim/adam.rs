use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Turning this off is only useful for mutation tests.
    #[serde(default = "yes")]
    pub bias_correction: bool,
}

fn yes() -> bool {
    true
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            bias_correction: true,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidInput(format!("{name} = {b} outside [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidInput(format!("eps = {} must be positive", self.eps)));
        }
        Ok(())
    }

    /// `(1 - β1^t, 1 - β2^t)`, or `(1, 1)` with correction disabled.
    pub(crate) fn corrections(&self, t: u64) -> (f64, f64) {
        if self.bias_correction {
            let t = t.min(i32::MAX as u64) as i32;
            (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t))
        } else {
            (1.0, 1.0)
        }
    }
}

/// Adam moments for one tensor. `m` and `v` are the raw EMAs; the bias
/// corrected copies are formed on the fly in [`AdamState::direction`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Matrix,
    pub v: Matrix,
    t: u64,
    hyper: AdamHyper,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize, hyper: AdamHyper) -> Result<Self> {
        hyper.validate()?;
        Ok(Self {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            t: 0,
            hyper,
        })
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn hyper(&self) -> &AdamHyper {
        &self.hyper
    }

    pub fn shape(&self) -> (usize, usize) {
        self.m.shape()
    }

    pub fn entries(&self) -> usize {
        self.m.len() + self.v.len()
    }

    pub fn reset(&mut self) {
        let (r, c) = self.m.shape();
        self.m = Matrix::zeros(r, c);
        self.v = Matrix::zeros(r, c);
        self.t = 0;
    }

    /// Advances the moments with `g` and returns `M̂ / (√V̂ + ε)`.
    pub fn direction(&mut self, g: &Matrix) -> Result<Matrix> {
        if g.shape() != self.m.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam",
                expected: self.m.shape(),
                got: g.shape(),
            });
        }
        let h = self.hyper;
        self.t += 1;
        let (c1, c2) = h.corrections(self.t);
        let mut out = Matrix::zeros(g.rows(), g.cols());
        let gs = g.as_slice();
        let ms = self.m.as_mut_slice();
        let vs = self.v.as_mut_slice();
        for (k, o) in out.as_mut_slice().iter_mut().enumerate() {
            let gk = gs[k];
            ms[k] = h.beta1 * ms[k] + (1.0 - h.beta1) * gk;
            vs[k] = h.beta2 * vs[k] + (1.0 - h.beta2) * gk * gk;
            let m_hat = ms[k] / c1;
            let v_hat = vs[k] / c2;
            *o = m_hat / (v_hat.sqrt() + h.eps);
        }
        Ok(out)
    }

    /// `ΔW = η · M̂ / (√V̂ + ε)`; the caller adds it to the weight.
    pub fn step(&mut self, g: &Matrix, eta: f64) -> Result<Matrix> {
        Ok(self.direction(g)?.scale(eta))
    }

    /// Re-expresses the moments in a rotated compact basis.
    /// `M' = L M R`, `V' = (L √V R)²`, with either side optional.
    pub fn rotate(&mut self, left: Option<&Matrix>, right: Option<&Matrix>) -> Result<()> {
        self.m = sandwich(left, &self.m, right)?;
        let root = self.v.map(f64::sqrt);
        self.v = sandwich(left, &root, right)?.map(|x| x * x);
        Ok(())
    }
}

pub(crate) fn sandwich(left: Option<&Matrix>, x: &Matrix, right: Option<&Matrix>) -> Result<Matrix> {
    let mut out = match left {
        Some(l) => l.matmul(x)?,
        None => x.clone(),
    };
    if let Some(r) = right {
        out = out.matmul(r)?;
    }
    Ok(out)
}

/// Functional wrapper: one Adam step returning `ΔW`.
pub fn adam_step(state: &mut AdamState, g: &Matrix, eta: f64) -> Result<Matrix> {
    state.step(g, eta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64) -> Matrix {
        Matrix::from_rows(&[&[x]]).unwrap()
    }

    #[test]
    fn zero_gradient_gives_zero_step() {
        let mut s = AdamState::new(2, 3, AdamHyper::default()).unwrap();
        let dw = s.step(&Matrix::zeros(2, 3), 0.1).unwrap();
        assert_eq!(dw, Matrix::zeros(2, 3));
        assert_eq!(s.t(), 1);
    }

    #[test]
    fn first_step_is_eta_sized() {
        let mut s = AdamState::new(2, 2, AdamHyper::default()).unwrap();
        let g = Matrix::from_fn(2, 2, |_, _| 1.0);
        let dw = s.step(&g, 0.01).unwrap();
        for &x in dw.as_slice() {
            assert!((x - 0.01 / (1.0 + 1e-8)).abs() < 1e-15);
        }
    }

    #[test]
    fn two_step_scalar_oracle() {
        let (b1, b2, eps, eta) = (0.9f64, 0.999f64, 1e-8f64, 0.1f64);
        let mut s = AdamState::new(1, 1, AdamHyper::default()).unwrap();
        s.step(&scalar(1.0), eta).unwrap();
        let dw2 = s.step(&scalar(-1.0), eta).unwrap().get(0, 0);

        let m1 = (1.0 - b1) * 1.0;
        let v1 = (1.0 - b2) * 1.0;
        let m2 = b1 * m1 + (1.0 - b1) * -1.0;
        let v2 = b2 * v1 + (1.0 - b2) * 1.0;
        let m_hat = m2 / (1.0 - b1 * b1);
        let v_hat = v2 / (1.0 - b2 * b2);
        let oracle = eta * m_hat / (v_hat.sqrt() + eps);
        assert!((dw2 - oracle).abs() <= 1e-12, "{dw2} vs {oracle}");
    }

    #[test]
    fn shape_and_hyper_validation() {
        let mut s = AdamState::new(2, 2, AdamHyper::default()).unwrap();
        assert!(s.step(&Matrix::zeros(2, 3), 0.1).is_err());
        let bad = AdamHyper {
            beta1: 1.0,
            ..AdamHyper::default()
        };
        assert!(AdamState::new(1, 1, bad).is_err());
        let bad = AdamHyper {
            eps: 0.0,
            ..AdamHyper::default()
        };
        assert!(AdamState::new(1, 1, bad).is_err());
    }

    #[test]
    fn disabling_correction_changes_first_step() {
        let hyper = AdamHyper {
            bias_correction: false,
            ..AdamHyper::default()
        };
        let mut s = AdamState::new(1, 1, hyper).unwrap();
        let dw = s.step(&scalar(1.0), 1.0).unwrap().get(0, 0);
        let expected = 0.1 / (0.001f64.sqrt() + 1e-8);
        assert!((dw - expected).abs() < 1e-12);
    }

    #[test]
    fn identity_rotation_is_noop() {
        let mut s = AdamState::new(2, 3, AdamHyper::default()).unwrap();
        s.step(&Matrix::from_fn(2, 3, |i, j| (i + 2 * j) as f64 - 1.5), 1.0).unwrap();
        let before = s.clone();
        s.rotate(Some(&Matrix::identity(2)), Some(&Matrix::identity(3))).unwrap();
        assert!(s.m.max_abs_diff(&before.m) < 1e-15);
        assert!(s.v.max_abs_diff(&before.v) < 1e-15);
    }
}
