use crate::error::{Error, Result};
use crate::linalg::{sym_eig, Matrix};
use crate::projector::{ProjectionMode, Projector};

/// Threshold for the "residual has vanished" step count.
pub const VANISH_TOL: f64 = 1e-12;

/// Two-sided pure-projection dynamics with constant coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionSpec {
    pub a: Vec<Matrix>,
    pub b: Vec<Matrix>,
    pub c: Vec<Matrix>,
    pub w0: Matrix,
    pub projector: Projector,
    pub eta: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    /// `‖R_t‖_F` for `t = 0..`.
    pub r_norms: Vec<f64>,
    /// `‖R_t‖_F / ‖R_{t−1}‖_F` for `t = 1..`; 0 where `R_{t−1} = 0`.
    pub ratios: Vec<f64>,
    /// `κ = (1/N) Σ λ_min(PᵀB_iP) λ_min(QᵀC_iQ)`.
    pub kappa: f64,
    /// `κ_t` per step; constant coefficients make every entry equal `kappa`.
    pub kappa_t: Vec<f64>,
    /// `1 − ηκ`.
    pub bound: f64,
    /// Set when `κ ≤ 0`: the run proceeds but nothing is promised.
    pub no_guarantee: bool,
    /// `⌈log(1e-12 / ‖R_0‖) / log(1 − ηκ)⌉`, when defined.
    pub predicted_steps: Option<usize>,
    /// First `t` with `‖R_t‖_F < 1e-12`.
    pub vanished_at: Option<usize>,
    pub w_final: Matrix,
}

impl ContractionReport {
    /// Largest `ratio − bound` over the run.
    pub fn worst_excess(&self) -> f64 {
        self.ratios
            .iter()
            .map(|r| r - self.bound)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Runs `W_t = W_{t−1} + η P R_{t−1} Qᵀ` with `R_t = PᵀG_tQ`.
///
/// `R` is advanced with `R_t = R_{t−1} − η (1/N) Σ B̂_i R_{t−1} Ĉ_i`, where
/// `B̂_i = PᵀB_iP` and `Ĉ_i = QᵀC_iQ`. It is the same recursion as going
/// through `W` but keeps full relative accuracy down to tiny residuals.
/// Runs at least until the predicted vanishing step.
pub fn contraction_check(spec: &ContractionSpec) -> Result<ContractionReport> {
    if spec.projector.mode() != ProjectionMode::TwoSided {
        return Err(Error::InvalidInput("contraction needs a two-sided projector".into()));
    }
    let n_batch = spec.a.len();
    if n_batch == 0 || spec.b.len() != n_batch || spec.c.len() != n_batch {
        return Err(Error::InvalidInput("A, B, C need equal positive counts".into()));
    }
    if !(spec.eta > 0.0) {
        return Err(Error::InvalidInput("eta must be positive".into()));
    }
    let p = spec.projector.p().ok_or(Error::UninitializedProjector)?;
    let q = spec.projector.q().ok_or(Error::UninitializedProjector)?;
    let (m, n) = spec.w0.shape();
    if p.rows() != m || q.rows() != n {
        return Err(Error::ShapeMismatch {
            op: "contraction",
            expected: (p.rows(), q.rows()),
            got: (m, n),
        });
    }

    let mut b_hat = Vec::with_capacity(n_batch);
    let mut c_hat = Vec::with_capacity(n_batch);
    let mut kappa = 0.0;
    for (b, c) in spec.b.iter().zip(&spec.c) {
        let bh = p.t_matmul(&b.matmul(p)?)?.symmetrized()?;
        let ch = q.t_matmul(&c.matmul(q)?)?.symmetrized()?;
        kappa += sym_eig(&bh)?.values[0] * sym_eig(&ch)?.values[0];
        b_hat.push(bh);
        c_hat.push(ch);
    }
    kappa /= n_batch as f64;
    let bound = 1.0 - spec.eta * kappa;
    let no_guarantee = kappa <= 0.0;
    if no_guarantee {
        log::warn!("kappa = {kappa:e} <= 0; no contraction guarantee");
    }

    let mut g0 = Matrix::zeros(m, n);
    for ((a, b), c) in spec.a.iter().zip(&spec.b).zip(&spec.c) {
        g0.axpy(1.0, &a.sub(&b.matmul(&spec.w0)?.matmul(c)?)?)?;
    }
    let g0 = g0.scale(1.0 / n_batch as f64);
    let mut r = spec.projector.project(&g0)?;
    let r0 = r.fro_norm();

    let predicted_steps = if !no_guarantee && bound > 0.0 && bound < 1.0 && r0 > VANISH_TOL {
        Some(((VANISH_TOL / r0).ln() / bound.ln()).ceil() as usize)
    } else if r0 <= VANISH_TOL {
        Some(0)
    } else {
        None
    };
    let total = spec.steps.max(predicted_steps.map_or(0, |k| k + 1));

    let mut w = spec.w0.clone();
    let mut r_norms = vec![r0];
    let mut ratios = Vec::with_capacity(total);
    let mut vanished_at = (r0 < VANISH_TOL).then_some(0);
    for t in 1..=total {
        w.axpy(spec.eta, &spec.projector.project_back(&r, 1.0)?)?;
        let mut sr = Matrix::zeros(r.rows(), r.cols());
        for (bh, ch) in b_hat.iter().zip(&c_hat) {
            sr.axpy(1.0, &bh.matmul(&r)?.matmul(ch)?)?;
        }
        r.axpy(-spec.eta / n_batch as f64, &sr)?;
        let prev = *r_norms.last().expect("non-empty");
        let cur = r.fro_norm();
        ratios.push(if prev > 0.0 { cur / prev } else { 0.0 });
        r_norms.push(cur);
        if vanished_at.is_none() && cur < VANISH_TOL {
            vanished_at = Some(t);
        }
    }

    Ok(ContractionReport {
        kappa_t: vec![kappa; total],
        r_norms,
        ratios,
        kappa,
        bound,
        no_guarantee,
        predicted_steps,
        vanished_at,
        w_final: w,
    })
}
