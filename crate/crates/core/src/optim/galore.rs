use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::projector::{ProjectionMode, Projector, RefreshOutcome, DEFAULT_SWITCH_FREQ};

use super::adafactor::{AdafactorHyper, AdafactorState};
use super::adam::{AdamHyper, AdamState};
use super::quant::{Adam8State, DEFAULT_BLOCK_SIZE};

/// What happens to the compact moments when the subspace is replaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SwitchPolicy {
    /// Keep the moments as they are.
    #[default]
    Carry,
    /// Zero the moments and restart the bias-correction clock.
    Reset,
    /// Map the moments into the new basis (`√V` is rotated and re-squared).
    Rotate,
}

/// The entry-wise regularizer run on the compact gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerKind {
    /// `N = R`: pure projected gradient step.
    Identity,
    Adam,
    Adafactor,
    /// Adam with int8 blockwise moment storage.
    Adam8bit,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Regularizer {
    Identity,
    Adam(AdamState),
    Adafactor(AdafactorState),
    Adam8(Adam8State),
}

impl Regularizer {
    pub fn direction(&mut self, r: &Matrix) -> Result<Matrix> {
        match self {
            Regularizer::Identity => Ok(r.clone()),
            Regularizer::Adam(s) => s.direction(r),
            Regularizer::Adafactor(s) => s.direction(r),
            Regularizer::Adam8(s) => s.direction(r),
        }
    }

    pub fn reset(&mut self) {
        match self {
            Regularizer::Identity => {}
            Regularizer::Adam(s) => s.reset(),
            Regularizer::Adafactor(s) => s.reset(),
            Regularizer::Adam8(s) => s.reset(),
        }
    }

    pub fn rotate(&mut self, left: Option<&Matrix>, right: Option<&Matrix>) -> Result<()> {
        match self {
            Regularizer::Identity => Ok(()),
            Regularizer::Adam(s) => s.rotate(left, right),
            Regularizer::Adafactor(s) => s.rotate(left, right),
            Regularizer::Adam8(s) => s.rotate(left, right),
        }
    }

    pub fn entries(&self) -> usize {
        match self {
            Regularizer::Identity => 0,
            Regularizer::Adam(s) => s.entries(),
            Regularizer::Adafactor(s) => s.entries(),
            Regularizer::Adam8(s) => s.entries(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaLoreConfig {
    pub rank: usize,
    pub switch_freq: u64,
    pub alpha: f64,
    pub inner: InnerKind,
    pub policy: SwitchPolicy,
    /// `None` picks the shorter side.
    pub mode: Option<ProjectionMode>,
    pub adam: AdamHyper,
    pub adafactor: AdafactorHyper,
    pub block_size: usize,
}

impl GaLoreConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            switch_freq: DEFAULT_SWITCH_FREQ,
            alpha: 0.25,
            inner: InnerKind::Adam,
            policy: SwitchPolicy::Carry,
            mode: None,
            adam: AdamHyper::default(),
            adafactor: AdafactorHyper::default(),
            block_size: DEFAULT_BLOCK_SIZE,
        }
    }
}

/// Projector plus compact optimizer state for one weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GaLoreOptimState {
    pub projector: Projector,
    pub inner: Regularizer,
    alpha: f64,
    policy: SwitchPolicy,
}

impl GaLoreOptimState {
    pub fn new(m: usize, n: usize, cfg: &GaLoreConfig) -> Result<Self> {
        let mode = cfg.mode.unwrap_or_else(|| ProjectionMode::one_sided_for(m, n));
        let projector = Projector::with_mode(m, n, cfg.rank, cfg.switch_freq, mode)?;
        let (rows, cols) = projector.compact_shape();
        let inner = match cfg.inner {
            InnerKind::Identity => Regularizer::Identity,
            InnerKind::Adam => Regularizer::Adam(AdamState::new(rows, cols, cfg.adam)?),
            InnerKind::Adafactor => {
                Regularizer::Adafactor(AdafactorState::new(rows, cols, cfg.adafactor)?)
            }
            InnerKind::Adam8bit => {
                Regularizer::Adam8(Adam8State::new(rows, cols, cfg.adam, cfg.block_size)?)
            }
        };
        Self::with_parts(projector, inner, cfg.alpha, cfg.policy)
    }

    pub fn with_parts(
        projector: Projector,
        inner: Regularizer,
        alpha: f64,
        policy: SwitchPolicy,
    ) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidInput(format!("alpha = {alpha} must be positive")));
        }
        Ok(Self {
            projector,
            inner,
            alpha,
            policy,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn policy(&self) -> SwitchPolicy {
        self.policy
    }

    /// Stored entries: compact moments plus projector factors.
    pub fn state_entries(&self) -> usize {
        self.inner.entries() + self.projector.factor_entries()
    }

    /// Refresh, project, regularize, project back. Returns `G̃ = α P N`.
    pub fn update(&mut self, g: &Matrix, step: u64) -> Result<Matrix> {
        let had_factors = self.projector.is_initialized();
        let old = if self.policy == SwitchPolicy::Rotate && had_factors {
            Some((self.projector.p().cloned(), self.projector.q().cloned()))
        } else {
            None
        };
        let outcome = self.projector.maybe_refresh(g, step)?;
        if outcome == RefreshOutcome::Refreshed && had_factors {
            match self.policy {
                SwitchPolicy::Carry => {}
                SwitchPolicy::Reset => self.inner.reset(),
                SwitchPolicy::Rotate => {
                    let (p_old, q_old) = old.expect("factors captured before refresh");
                    let left = match (self.projector.p(), &p_old) {
                        (Some(p_new), Some(p_old)) => Some(p_new.t_matmul(p_old)?),
                        _ => None,
                    };
                    let right = match (self.projector.q(), &q_old) {
                        (Some(q_new), Some(q_old)) => Some(q_old.t_matmul(q_new)?),
                        _ => None,
                    };
                    self.inner.rotate(left.as_ref(), right.as_ref())?;
                }
            }
        }
        let r = self.projector.project(g)?;
        let n = self.inner.direction(&r)?;
        self.projector.project_back(&n, self.alpha)
    }

    /// `W ← W + η · G̃`.
    pub fn step(&mut self, w: &mut Matrix, g: &Matrix, eta: f64, step: u64) -> Result<()> {
        if w.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "galore step",
                expected: w.shape(),
                got: g.shape(),
            });
        }
        let update = self.update(g, step)?;
        w.axpy(eta, &update)
    }
}

pub fn galore_adam_step(
    w: &mut Matrix,
    g: &Matrix,
    state: &mut GaLoreOptimState,
    eta: f64,
    step: u64,
) -> Result<()> {
    state.step(w, g, eta, step)
}
