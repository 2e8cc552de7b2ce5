use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::random::uniform_matrix;

use super::adam::{AdamHyper, AdamState};

pub const DEFAULT_LORA_ALPHA: f64 = 32.0;

/// `W = W0 + s · B A` with frozen `W0`, `B` starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraState {
    pub w0: Matrix,
    pub b: Matrix,
    pub a: Matrix,
    scaling: f64,
    adam_b: AdamState,
    adam_a: AdamState,
}

impl LoraState {
    /// `A` is drawn uniformly from `±1/√n`.
    pub fn new<R: Rng + ?Sized>(
        w0: Matrix,
        rank: usize,
        lora_alpha: f64,
        hyper: AdamHyper,
        rng: &mut R,
    ) -> Result<Self> {
        let (m, n) = w0.shape();
        if rank == 0 {
            return Err(Error::InvalidInput("LoRA rank must be positive".into()));
        }
        if !(lora_alpha > 0.0) {
            return Err(Error::InvalidInput("lora_alpha must be positive".into()));
        }
        let a = uniform_matrix(rng, rank, n, 1.0 / (n as f64).sqrt());
        Ok(Self {
            w0,
            b: Matrix::zeros(m, rank),
            a,
            scaling: lora_alpha / rank as f64,
            adam_b: AdamState::new(m, rank, hyper)?,
            adam_a: AdamState::new(rank, n, hyper)?,
        })
    }

    pub fn scaling(&self) -> f64 {
        self.scaling
    }

    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    /// `W0 + s · B A`.
    pub fn effective(&self) -> Matrix {
        let mut w = self.w0.clone();
        let ba = self.b.matmul(&self.a).expect("factor shapes agree");
        w.axpy(self.scaling, &ba).expect("factor shapes agree");
        w
    }

    /// Optimizer entries: Adam moments for both factors.
    pub fn state_entries(&self) -> usize {
        self.adam_a.entries() + self.adam_b.entries()
    }

    pub fn adaptor_entries(&self) -> usize {
        self.a.len() + self.b.len()
    }

    /// One Adam step on each factor given the gradient w.r.t. the effective
    /// weight. Both factor gradients use the pre-step factors.
    pub fn step(&mut self, g_w: &Matrix, eta: f64) -> Result<()> {
        if g_w.shape() != self.w0.shape() {
            return Err(Error::ShapeMismatch {
                op: "lora step",
                expected: self.w0.shape(),
                got: g_w.shape(),
            });
        }
        let grad_b = g_w.matmul_t(&self.a)?.scale(self.scaling);
        let grad_a = self.b.t_matmul(g_w)?.scale(self.scaling);
        let db = self.adam_b.step(&grad_b, eta)?;
        let da = self.adam_a.step(&grad_a, eta)?;
        self.b.axpy(1.0, &db)?;
        self.a.axpy(1.0, &da)?;
        Ok(())
    }
}

pub fn lora_adam_step(state: &mut LoraState, g_w: &Matrix, eta: f64) -> Result<()> {
    state.step(g_w, eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{gaussian_matrix, seeded};

    #[test]
    fn first_step_moves_only_b() {
        let mut rng = seeded(1);
        let w0 = gaussian_matrix(&mut rng, 4, 5);
        let mut s = LoraState::new(w0, 2, 32.0, AdamHyper::default(), &mut rng).unwrap();
        let a0 = s.a.clone();
        s.step(&gaussian_matrix(&mut rng, 4, 5), 0.01).unwrap();
        assert_eq!(s.a, a0);
        assert!(s.b.max_abs() > 0.0);
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut rng = seeded(2);
        let w0 = gaussian_matrix(&mut rng, 3, 3);
        let mut s = LoraState::new(w0.clone(), 2, 32.0, AdamHyper::default(), &mut rng).unwrap();
        let before = s.effective();
        s.step(&Matrix::zeros(3, 3), 0.1).unwrap();
        assert_eq!(s.effective(), before);
        assert_eq!(s.w0, w0);
    }

    #[test]
    fn two_step_compositional_oracle() {
        let mut rng = seeded(3);
        let w0 = gaussian_matrix(&mut rng, 4, 4);
        let g1 = gaussian_matrix(&mut rng, 4, 4);
        let g2 = gaussian_matrix(&mut rng, 4, 4);
        let mut s = LoraState::new(w0.clone(), 2, 32.0, AdamHyper::default(), &mut rng).unwrap();
        let sc = 16.0;
        let mut b = s.b.clone();
        let mut a = s.a.clone();
        let mut adam_b = AdamState::new(4, 2, AdamHyper::default()).unwrap();
        let mut adam_a = AdamState::new(2, 4, AdamHyper::default()).unwrap();
        for g in [&g1, &g2] {
            s.step(g, 0.01).unwrap();
            let gb = g.matmul(&a.transpose()).unwrap().scale(sc);
            let ga = b.transpose().matmul(g).unwrap().scale(sc);
            b = b.add(&adam_b.step(&gb, 0.01).unwrap()).unwrap();
            a = a.add(&adam_a.step(&ga, 0.01).unwrap()).unwrap();
        }
        let oracle = w0.add(&b.matmul(&a).unwrap().scale(sc)).unwrap();
        assert!(s.effective().max_abs_diff(&oracle) <= 1e-12);
        assert_eq!(s.state_entries(), 2 * (4 * 2 + 2 * 4));
    }

    #[test]
    fn shape_mismatch() {
        let mut rng = seeded(4);
        let mut s =
            LoraState::new(Matrix::zeros(3, 4), 1, 32.0, AdamHyper::default(), &mut rng).unwrap();
        assert!(s.step(&Matrix::zeros(4, 3), 0.1).is_err());
    }
}
