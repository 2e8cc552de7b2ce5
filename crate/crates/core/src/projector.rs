//! Low-rank gradient subspace: refresh from the SVD of the current gradient,
//! project into the compact space and back.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{svd_thin, Matrix};

/// Refresh period meaning "only at step 0".
pub const NEVER: u64 = u64::MAX;
pub const DEFAULT_SWITCH_FREQ: u64 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionMode {
    /// `R = PᵀG`.
    Left,
    /// `R = G Q`.
    Right,
    /// `R = PᵀG Q`.
    TwoSided,
}

impl ProjectionMode {
    /// One-sided default: project the shorter side.
    pub fn one_sided_for(m: usize, n: usize) -> Self {
        if m <= n {
            ProjectionMode::Left
        } else {
            ProjectionMode::Right
        }
    }

    fn uses_p(self) -> bool {
        matches!(self, ProjectionMode::Left | ProjectionMode::TwoSided)
    }

    fn uses_q(self) -> bool {
        matches!(self, ProjectionMode::Right | ProjectionMode::TwoSided)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefreshOutcome {
    Skipped,
    Refreshed,
    /// Zero gradient at a refresh step; factors kept or set to canonical columns.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    mode: ProjectionMode,
    m: usize,
    n: usize,
    rank: usize,
    switch_freq: u64,
    p: Option<Matrix>,
    q: Option<Matrix>,
    last_refresh_step: i64,
    refresh_count: u64,
    degenerate_count: u64,
}

impl Projector {
    /// One-sided projector on the shorter side of an `m × n` weight.
    pub fn new(m: usize, n: usize, rank: usize, switch_freq: u64) -> Result<Self> {
        Self::with_mode(m, n, rank, switch_freq, ProjectionMode::one_sided_for(m, n))
    }

    pub fn with_mode(
        m: usize,
        n: usize,
        rank: usize,
        switch_freq: u64,
        mode: ProjectionMode,
    ) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidInput(format!("projector shape {m}x{n}")));
        }
        if rank == 0 {
            return Err(Error::InvalidInput("projector rank must be positive".into()));
        }
        if switch_freq == 0 {
            return Err(Error::InvalidInput("switch frequency must be positive".into()));
        }
        let cap = m.min(n);
        let rank = if rank > cap {
            log::warn!("rank {rank} exceeds min({m}, {n}); clamping to {cap}");
            cap
        } else {
            rank
        };
        Ok(Self {
            mode,
            m,
            n,
            rank,
            switch_freq,
            p: None,
            q: None,
            last_refresh_step: -1,
            refresh_count: 0,
            degenerate_count: 0,
        })
    }

    /// Two-sided (or one-sided) projector with caller-supplied fixed factors.
    /// The factors must be column-orthonormal within 1e-8. It never refreshes.
    pub fn from_factors(p: Option<Matrix>, q: Option<Matrix>) -> Result<Self> {
        let mode = match (&p, &q) {
            (Some(_), Some(_)) => ProjectionMode::TwoSided,
            (Some(_), None) => ProjectionMode::Left,
            (None, Some(_)) => ProjectionMode::Right,
            (None, None) => {
                return Err(Error::InvalidInput("from_factors needs at least one factor".into()))
            }
        };
        for f in p.iter().chain(q.iter()) {
            let err = f.t_matmul(f)?.max_abs_diff(&Matrix::identity(f.cols()));
            if err > 1e-8 {
                return Err(Error::InvalidInput(format!(
                    "projection factor is not column-orthonormal (error {err:e})"
                )));
            }
        }
        let rank = p.as_ref().or(q.as_ref()).map(|f| f.cols()).unwrap_or(0);
        if let (Some(p), Some(q)) = (&p, &q) {
            if p.cols() != q.cols() {
                return Err(Error::InvalidInput("P and Q ranks differ".into()));
            }
        }
        let m = p.as_ref().map(|p| p.rows()).unwrap_or(0);
        let n = q.as_ref().map(|q| q.rows()).unwrap_or(0);
        Ok(Self {
            mode,
            m,
            n,
            rank,
            switch_freq: NEVER,
            p,
            q,
            last_refresh_step: 0,
            refresh_count: 1,
            degenerate_count: 0,
        })
    }

    pub fn mode(&self) -> ProjectionMode {
        self.mode
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn switch_freq(&self) -> u64 {
        self.switch_freq
    }

    pub fn p(&self) -> Option<&Matrix> {
        self.p.as_ref()
    }

    pub fn q(&self) -> Option<&Matrix> {
        self.q.as_ref()
    }

    pub fn last_refresh_step(&self) -> i64 {
        self.last_refresh_step
    }

    pub fn refresh_count(&self) -> u64 {
        self.refresh_count
    }

    pub fn degenerate_count(&self) -> u64 {
        self.degenerate_count
    }

    pub fn is_initialized(&self) -> bool {
        (!self.mode.uses_p() || self.p.is_some()) && (!self.mode.uses_q() || self.q.is_some())
    }

    /// Whether `step` is a refresh step.
    pub fn is_refresh_step(&self, step: u64) -> bool {
        step % self.switch_freq == 0
    }

    /// Shape of `project(G)` for a gradient shaped like this projector's weight.
    pub fn compact_shape(&self) -> (usize, usize) {
        match self.mode {
            ProjectionMode::Left => (self.rank, self.n),
            ProjectionMode::Right => (self.m, self.rank),
            ProjectionMode::TwoSided => (self.rank, self.rank),
        }
    }

    /// Entries held by the stored factors.
    pub fn factor_entries(&self) -> usize {
        let mut e = 0;
        if self.mode.uses_p() {
            e += self.m * self.rank;
        }
        if self.mode.uses_q() {
            e += self.n * self.rank;
        }
        e
    }

    fn check_shape(&self, g: &Matrix, op: &'static str) -> Result<()> {
        let expected = (self.m, self.n);
        let ok = match self.mode {
            ProjectionMode::Left => g.rows() == self.m && (self.n == 0 || g.cols() == self.n),
            ProjectionMode::Right => g.cols() == self.n && (self.m == 0 || g.rows() == self.m),
            ProjectionMode::TwoSided => g.shape() == expected,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op,
                expected,
                got: g.shape(),
            })
        }
    }

    /// Recomputes the factors from `G` when `step mod T == 0`.
    pub fn maybe_refresh(&mut self, g: &Matrix, step: u64) -> Result<RefreshOutcome> {
        self.check_shape(g, "maybe_refresh")?;
        if !self.is_refresh_step(step) {
            return Ok(RefreshOutcome::Skipped);
        }
        self.refresh(g, step)
    }

    /// Unconditional refresh at `step`.
    pub fn refresh(&mut self, g: &Matrix, step: u64) -> Result<RefreshOutcome> {
        self.check_shape(g, "refresh")?;
        if g.fro_norm_sq() == 0.0 {
            log::warn!("zero gradient at refresh step {step}; keeping previous subspace");
            self.degenerate_count += 1;
            if self.mode.uses_p() && self.p.is_none() {
                self.p = Some(canonical_columns(self.m, self.rank));
            }
            if self.mode.uses_q() && self.q.is_none() {
                self.q = Some(canonical_columns(self.n, self.rank));
            }
            return Ok(RefreshOutcome::Degenerate);
        }
        let svd = svd_thin(g)?;
        if self.mode.uses_p() {
            self.p = Some(svd.u.leading_columns(self.rank));
        }
        if self.mode.uses_q() {
            self.q = Some(svd.v.leading_columns(self.rank));
        }
        self.last_refresh_step = step as i64;
        self.refresh_count += 1;
        Ok(RefreshOutcome::Refreshed)
    }

    fn factor_p(&self) -> Result<&Matrix> {
        self.p.as_ref().ok_or(Error::UninitializedProjector)
    }

    fn factor_q(&self) -> Result<&Matrix> {
        self.q.as_ref().ok_or(Error::UninitializedProjector)
    }

    /// Compact gradient `R`.
    pub fn project(&self, g: &Matrix) -> Result<Matrix> {
        self.check_shape(g, "project")?;
        match self.mode {
            ProjectionMode::Left => self.factor_p()?.t_matmul(g),
            ProjectionMode::Right => g.matmul(self.factor_q()?),
            ProjectionMode::TwoSided => {
                let p = self.factor_p()?;
                let q = self.factor_q()?;
                p.t_matmul(g)?.matmul(q)
            }
        }
    }

    /// `α · P N`, `α · N Qᵀ` or `α · P N Qᵀ`.
    pub fn project_back(&self, n: &Matrix, alpha: f64) -> Result<Matrix> {
        let back = match self.mode {
            ProjectionMode::Left => self.factor_p()?.matmul(n)?,
            ProjectionMode::Right => n.matmul_t(self.factor_q()?)?,
            ProjectionMode::TwoSided => {
                let p = self.factor_p()?;
                let q = self.factor_q()?;
                p.matmul(n)?.matmul_t(q)?
            }
        };
        Ok(back.scale(alpha))
    }
}

fn canonical_columns(rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |i, j| if i == j { 1.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{gaussian_matrix, seeded};

    #[test]
    fn refresh_schedule() {
        let mut rng = seeded(1);
        let g = gaussian_matrix(&mut rng, 4, 6);
        let mut p = Projector::new(4, 6, 2, 200).unwrap();
        assert_eq!(p.maybe_refresh(&g, 0).unwrap(), RefreshOutcome::Refreshed);
        let snapshot = p.clone();
        for step in 1..200 {
            let other = gaussian_matrix(&mut rng, 4, 6);
            assert_eq!(p.maybe_refresh(&other, step).unwrap(), RefreshOutcome::Skipped);
        }
        assert_eq!(p, snapshot);
        assert_eq!(p.maybe_refresh(&g, 200).unwrap(), RefreshOutcome::Refreshed);
        assert_eq!(p.refresh_count(), 2);
        assert_eq!(p.last_refresh_step(), 200);
    }

    #[test]
    fn side_selection_and_clamping() {
        assert_eq!(Projector::new(3, 5, 1, 1).unwrap().mode(), ProjectionMode::Left);
        assert_eq!(Projector::new(5, 5, 1, 1).unwrap().mode(), ProjectionMode::Left);
        assert_eq!(Projector::new(6, 5, 1, 1).unwrap().mode(), ProjectionMode::Right);
        assert_eq!(Projector::new(3, 5, 9, 1).unwrap().rank(), 3);
        assert!(Projector::new(3, 5, 0, 1).is_err());
        assert!(Projector::new(3, 5, 1, 0).is_err());
    }

    #[test]
    fn diagonal_top_direction() {
        let g = Matrix::from_diag(&[3.0, 2.0, 1.0]);
        let mut p = Projector::new(3, 3, 1, 200).unwrap();
        p.maybe_refresh(&g, 0).unwrap();
        assert_eq!(p.p().unwrap().column(0), vec![1.0, 0.0, 0.0]);
        let back = p.project_back(&p.project(&g).unwrap(), 1.0).unwrap();
        assert_eq!(back, Matrix::from_diag(&[3.0, 0.0, 0.0]));
        let resid = g.sub(&back).unwrap().fro_norm();
        assert!((resid - 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn projection_matches_direct_products() {
        let mut rng = seeded(2);
        let g = gaussian_matrix(&mut rng, 4, 6);
        for mode in [ProjectionMode::Left, ProjectionMode::Right, ProjectionMode::TwoSided] {
            let mut p = Projector::with_mode(4, 6, 2, 10, mode).unwrap();
            assert!(matches!(p.project(&g), Err(Error::UninitializedProjector)));
            p.maybe_refresh(&g, 0).unwrap();
            let r = p.project(&g).unwrap();
            assert_eq!(r.shape(), p.compact_shape());
            let oracle = match mode {
                ProjectionMode::Left => p.p().unwrap().transpose().matmul(&g).unwrap(),
                ProjectionMode::Right => g.matmul(p.q().unwrap()).unwrap(),
                ProjectionMode::TwoSided => p
                    .p()
                    .unwrap()
                    .transpose()
                    .matmul(&g)
                    .unwrap()
                    .matmul(p.q().unwrap())
                    .unwrap(),
            };
            assert!(r.max_abs_diff(&oracle) <= 1e-12);
            assert_eq!(p.project_back(&r, 0.0).unwrap(), Matrix::zeros(4, 6));
            assert!(p.project(&Matrix::zeros(4, 6)).unwrap().max_abs() == 0.0);
        }
    }

    #[test]
    fn full_rank_is_lossless() {
        let mut rng = seeded(3);
        let g = gaussian_matrix(&mut rng, 4, 6);
        let mut p = Projector::new(4, 6, 4, 1).unwrap();
        p.maybe_refresh(&g, 0).unwrap();
        let r = p.project(&g).unwrap();
        assert!((r.fro_norm() - g.fro_norm()).abs() < 1e-12);
        assert!(p.project_back(&r, 1.0).unwrap().max_abs_diff(&g) < 1e-10);
    }

    #[test]
    fn zero_gradient_refresh_is_degenerate() {
        let mut p = Projector::new(3, 4, 2, 5).unwrap();
        let z = Matrix::zeros(3, 4);
        assert_eq!(p.maybe_refresh(&z, 0).unwrap(), RefreshOutcome::Degenerate);
        assert_eq!(p.p().unwrap(), &Matrix::from_fn(3, 2, |i, j| (i == j) as u8 as f64));
        assert_eq!(p.refresh_count(), 0);
        assert_eq!(p.degenerate_count(), 1);

        let mut rng = seeded(4);
        let g = gaussian_matrix(&mut rng, 3, 4);
        p.maybe_refresh(&g, 5).unwrap();
        let kept = p.p().unwrap().clone();
        assert_eq!(p.maybe_refresh(&z, 10).unwrap(), RefreshOutcome::Degenerate);
        assert_eq!(p.p().unwrap(), &kept);
    }

    #[test]
    fn shape_errors() {
        let mut p = Projector::new(3, 4, 2, 5).unwrap();
        assert!(p.maybe_refresh(&Matrix::zeros(4, 3), 0).is_err());
        assert!(p.maybe_refresh(&Matrix::zeros(4, 3), 1).is_err());
        p.maybe_refresh(&Matrix::identity(4).leading_columns(3).transpose(), 0).unwrap();
        assert!(p.project_back(&Matrix::zeros(3, 4), 1.0).is_err());
    }

    #[test]
    fn explicit_factors() {
        let p = Matrix::identity(3).leading_columns(2);
        let proj = Projector::from_factors(Some(p.clone()), Some(p)).unwrap();
        assert_eq!(proj.mode(), ProjectionMode::TwoSided);
        assert_eq!(proj.compact_shape(), (2, 2));
        let bad = Matrix::from_fn(3, 1, |_, _| 1.0);
        assert!(Projector::from_factors(Some(bad), None).is_err());
    }
}
