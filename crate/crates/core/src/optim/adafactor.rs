use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::adam::sandwich;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdafactorHyper {
    pub beta1: f64,
    /// Decay of the factored row/column accumulators.
    pub beta2f: f64,
    pub eps: f64,
}

impl Default for AdafactorHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2f: 0.999,
            eps: 1e-8,
        }
    }
}

/// First-order Adafactor: full first moment, factored second moment.
///
/// `row_acc` and `col_acc` are EMAs of the row and column means of `G²`.
/// The second moment estimate is `row_i · col_j / mean(row)`, bias corrected
/// by `1 - β2f^t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdafactorState {
    pub m: Matrix,
    pub row_acc: Vec<f64>,
    pub col_acc: Vec<f64>,
    t: u64,
    hyper: AdafactorHyper,
}

impl AdafactorState {
    pub fn new(rows: usize, cols: usize, hyper: AdafactorHyper) -> Result<Self> {
        for (name, b) in [("beta1", hyper.beta1), ("beta2f", hyper.beta2f)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidInput(format!("{name} = {b} outside [0, 1)")));
            }
        }
        if !(hyper.eps > 0.0) {
            return Err(Error::InvalidInput("eps must be positive".into()));
        }
        Ok(Self {
            m: Matrix::zeros(rows, cols),
            row_acc: vec![0.0; rows],
            col_acc: vec![0.0; cols],
            t: 0,
            hyper,
        })
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn entries(&self) -> usize {
        self.m.len() + self.row_acc.len() + self.col_acc.len()
    }

    pub fn reset(&mut self) {
        let (r, c) = self.m.shape();
        self.m = Matrix::zeros(r, c);
        self.row_acc = vec![0.0; r];
        self.col_acc = vec![0.0; c];
        self.t = 0;
    }

    /// Current `V̂` (bias corrected).
    pub fn second_moment(&self) -> Matrix {
        let (r, c) = self.m.shape();
        let mean_row = self.row_acc.iter().sum::<f64>() / r as f64;
        if mean_row <= 0.0 || self.t == 0 {
            return Matrix::zeros(r, c);
        }
        let corr = 1.0 - self.hyper.beta2f.powi(self.t.min(i32::MAX as u64) as i32);
        Matrix::from_fn(r, c, |i, j| self.row_acc[i] * self.col_acc[j] / mean_row / corr)
    }

    pub fn direction(&mut self, g: &Matrix) -> Result<Matrix> {
        if g.shape() != self.m.shape() {
            return Err(Error::ShapeMismatch {
                op: "adafactor",
                expected: self.m.shape(),
                got: g.shape(),
            });
        }
        let h = self.hyper;
        let (r, c) = g.shape();
        self.t += 1;
        for (mk, gk) in self.m.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *mk = h.beta1 * *mk + (1.0 - h.beta1) * gk;
        }
        for i in 0..r {
            let mean_sq = g.row(i).iter().map(|x| x * x).sum::<f64>() / c as f64;
            self.row_acc[i] = h.beta2f * self.row_acc[i] + (1.0 - h.beta2f) * mean_sq;
        }
        for j in 0..c {
            let mean_sq = (0..r).map(|i| g.get(i, j).powi(2)).sum::<f64>() / r as f64;
            self.col_acc[j] = h.beta2f * self.col_acc[j] + (1.0 - h.beta2f) * mean_sq;
        }
        let v_hat = self.second_moment();
        let c1 = 1.0 - h.beta1.powi(self.t.min(i32::MAX as u64) as i32);
        let out = Matrix::from_fn(r, c, |i, j| {
            (self.m.get(i, j) / c1) / (v_hat.get(i, j).sqrt() + h.eps)
        });
        Ok(out)
    }

    pub fn step(&mut self, g: &Matrix, eta: f64) -> Result<Matrix> {
        Ok(self.direction(g)?.scale(eta))
    }

    /// Rotates the first moment only; the factored accumulators have no
    /// meaningful image under a basis change and are carried.
    pub fn rotate(&mut self, left: Option<&Matrix>, right: Option<&Matrix>) -> Result<()> {
        self.m = sandwich(left, &self.m, right)?;
        Ok(())
    }
}

pub fn adafactor_step(state: &mut AdafactorState, g: &Matrix, eta: f64) -> Result<Matrix> {
    state.step(g, eta)
}
