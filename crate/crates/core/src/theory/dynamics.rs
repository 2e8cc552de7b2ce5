use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{kron, spectral_norm, stable_rank, sym_eig, unvec, vec, Matrix};

/// Tolerance separating λ1 from λ2 and sizing the λ1 eigenspace.
pub const DISTINCT_TOL: f64 = 1e-9;
/// Largest `m` or `n` accepted, keeping `S` at most 1024 × 1024.
pub const MAX_DIM: usize = 32;
/// `‖G_{t0}∥‖_F` below this fraction of `‖G_{t0}‖_F` counts as zero.
pub const PARALLEL_ZERO_TOL: f64 = 1e-12;

/// Constant-coefficient gradient dynamics
/// `G(W) = (1/N) Σ (A_i − B_i W C_i)` under `W_t = W_{t−1} + η G_{t−1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSpec {
    #[serde(with = "matrix_list")]
    pub a: Vec<Matrix>,
    #[serde(with = "matrix_list")]
    pub b: Vec<Matrix>,
    #[serde(with = "matrix_list")]
    pub c: Vec<Matrix>,
    #[serde(with = "matrix_serde")]
    pub w0: Matrix,
    pub eta: f64,
    pub steps: usize,
    #[serde(default)]
    pub t0: usize,
}

impl DynamicsSpec {
    pub fn batch(&self) -> usize {
        self.a.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.w0.shape()
    }

    /// `S = (1/N) Σ C_i ⊗ B_i`, which acts on `vec(G)`.
    pub fn s_matrix(&self) -> Result<Matrix> {
        let (m, n) = self.shape();
        let mut s = Matrix::zeros(m * n, m * n);
        for (b, c) in self.b.iter().zip(&self.c) {
            s.axpy(1.0 / self.batch() as f64, &kron(c, b)?)?;
        }
        Ok(s)
    }

    /// Direct evaluation of `G(W)`.
    pub fn gradient_at(&self, w: &Matrix) -> Result<Matrix> {
        let (m, n) = self.shape();
        let mut g = Matrix::zeros(m, n);
        for ((a, b), c) in self.a.iter().zip(&self.b).zip(&self.c) {
            let bwc = b.matmul(w)?.matmul(c)?;
            g.axpy(1.0, &a.sub(&bwc)?)?;
        }
        Ok(g.scale(1.0 / self.batch() as f64))
    }

    /// `(1/N) Σ B_i X C_i`.
    pub fn apply_s(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for (b, c) in self.b.iter().zip(&self.c) {
            out.axpy(1.0, &b.matmul(x)?.matmul(c)?)?;
        }
        Ok(out.scale(1.0 / self.batch() as f64))
    }

    /// Rejects inconsistent shapes, oversized problems and non-PSD coefficients.
    /// Returns the eigendecomposition of `S` for reuse.
    pub fn validate(&self) -> Result<crate::linalg::EigResult> {
        let n_batch = self.batch();
        if n_batch == 0 || self.b.len() != n_batch || self.c.len() != n_batch {
            return Err(Error::InvalidInput(format!(
                "A, B, C need equal positive counts (got {}, {}, {})",
                self.a.len(),
                self.b.len(),
                self.c.len()
            )));
        }
        let (m, n) = self.shape();
        if m > MAX_DIM || n > MAX_DIM {
            return Err(Error::InvalidInput(format!(
                "dynamics dimensions {m}x{n} exceed the {MAX_DIM} cap"
            )));
        }
        if !(self.eta > 0.0) {
            return Err(Error::InvalidInput("eta must be positive".into()));
        }
        for (i, ((a, b), c)) in self.a.iter().zip(&self.b).zip(&self.c).enumerate() {
            if a.shape() != (m, n) || b.shape() != (m, m) || c.shape() != (n, n) {
                return Err(Error::InvalidInput(format!(
                    "coefficient {i}: A {:?}, B {:?}, C {:?} do not fit W {m}x{n}",
                    a.shape(),
                    b.shape(),
                    c.shape()
                )));
            }
            check_psd(b, &format!("B_{i}"))?;
            check_psd(c, &format!("C_{i}"))?;
        }
        let eig = sym_eig(&self.s_matrix()?)?;
        let lmax = *eig.values.last().expect("non-empty");
        if self.eta * lmax >= 1.0 {
            return Err(Error::Unstable {
                eta: self.eta,
                product: self.eta * lmax,
            });
        }
        Ok(eig)
    }
}

fn check_psd(x: &Matrix, name: &str) -> Result<()> {
    let asym = x.max_abs_diff(&x.transpose());
    if asym > 1e-10 {
        return Err(Error::InvalidInput(format!("{name} is not symmetric ({asym:e})")));
    }
    let min = sym_eig(x)?.values[0];
    if min < -1e-10 * x.fro_norm().max(1.0) {
        return Err(Error::InvalidInput(format!("{name} is not PSD (min eigenvalue {min:e})")));
    }
    Ok(())
}

/// Spectrum of `S` as used by the stable-rank bound.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralData {
    pub eigenvalues: Vec<f64>,
    pub lambda1: f64,
    /// `None` when every eigenvalue equals λ1.
    pub lambda2: Option<f64>,
    /// Orthonormal basis of the λ1 eigenspace, `mn × k`.
    pub v1: Matrix,
    /// `((1 − ηλ2)/(1 − ηλ1))²`.
    pub decay_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: usize,
    pub fro_norm: f64,
    pub spec_norm: f64,
    /// `None` for an exactly zero gradient.
    pub stable_rank: Option<f64>,
    pub bound_rhs: Option<f64>,
    /// `‖G_t‖_F / ‖G_{t−1}‖_F`; `None` at `t = 0` or after a zero gradient.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DynamicsTrace {
    pub rows: Vec<TraceRow>,
    /// `G_t` for `t = 0..=steps`.
    pub grads: Vec<Matrix>,
    pub w_final: Matrix,
    pub spectral: SpectralData,
    pub t0: usize,
    /// Projection of `G_{t0}` onto the λ1 eigenspace.
    pub g_parallel: Matrix,
    pub lambda2_undefined: bool,
    /// `(sr(G_{t0}∥), ‖G_{t0} − G_{t0}∥‖_F² / ‖G_{t0}∥‖_2²)` when the projection is nonzero.
    bound_terms: Option<(f64, f64)>,
}

impl DynamicsTrace {
    /// `sr(G_{t0}∥)`, if the projection is nonzero.
    pub fn parallel_stable_rank(&self) -> Option<f64> {
        self.bound_terms.map(|b| b.0)
    }

    pub fn parallel_is_zero(&self) -> bool {
        self.bound_terms.is_none()
    }

    /// CSV with columns `t, fro_norm, spec_norm, stable_rank, bound_rhs, ratio`.
    /// Undefined values are written as empty fields.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "fro_norm", "spec_norm", "stable_rank", "bound_rhs", "ratio"])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.t.to_string(),
                format!("{:.17e}", r.fro_norm),
                format!("{:.17e}", r.spec_norm),
                opt(r.stable_rank),
                opt(r.bound_rhs),
                opt(r.ratio),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the dynamics for `spec.steps` steps.
///
/// `G_t` is propagated with `G_t = G_{t−1} − η S(G_{t−1})`, which equals
/// `G(W_t)` exactly in real arithmetic but avoids the cancellation in
/// `A − B W C` once the gradient is small.
pub fn simulate_dynamics(spec: &DynamicsSpec) -> Result<DynamicsTrace> {
    let eig = spec.validate()?;
    let (m, n) = spec.shape();
    if spec.t0 > spec.steps {
        return Err(Error::InvalidInput(format!(
            "t0 = {} exceeds steps = {}",
            spec.t0, spec.steps
        )));
    }

    let lambda1 = eig.values[0];
    let k1 = eig
        .values
        .iter()
        .take_while(|&&v| v - lambda1 <= DISTINCT_TOL)
        .count();
    let lambda2 = eig.values.get(k1).copied();
    let v1 = eig.vectors.leading_columns(k1);
    let decay_ratio = lambda2.map(|l2| ((1.0 - spec.eta * l2) / (1.0 - spec.eta * lambda1)).powi(2));
    let spectral = SpectralData {
        eigenvalues: eig.values.clone(),
        lambda1,
        lambda2,
        v1,
        decay_ratio,
    };

    let mut w = spec.w0.clone();
    let mut g = spec.gradient_at(&w)?;
    let mut grads = Vec::with_capacity(spec.steps + 1);
    grads.push(g.clone());
    for _ in 0..spec.steps {
        w.axpy(spec.eta, &g)?;
        let sg = spec.apply_s(&g)?;
        g.axpy(-spec.eta, &sg)?;
        grads.push(g.clone());
    }

    let g_t0 = &grads[spec.t0];
    let coeffs = spectral.v1.t_matvec(&vec(g_t0))?;
    let g_par_vec = spectral.v1.matvec(&coeffs)?;
    let g_parallel = unvec(&g_par_vec, m, n)?;

    let base = grads[spec.t0].fro_norm();
    let bound_terms = if base == 0.0 || g_parallel.fro_norm() <= PARALLEL_ZERO_TOL * base {
        None
    } else {
        let s1 = spectral_norm(&g_parallel)?;
        let sr_par = stable_rank(&g_parallel)?;
        let resid = grads[spec.t0].sub(&g_parallel)?.fro_norm_sq() / (s1 * s1);
        Some((sr_par, resid))
    };

    let mut trace = DynamicsTrace {
        rows: Vec::with_capacity(grads.len()),
        grads,
        w_final: w,
        lambda2_undefined: spectral.lambda2.is_none(),
        spectral,
        t0: spec.t0,
        g_parallel,
        bound_terms,
    };
    if trace.lambda2_undefined {
        log::warn!("all eigenvalues of S coincide; the stable-rank bound is undefined");
    }

    let mut prev_fro: Option<f64> = None;
    for t in 0..trace.grads.len() {
        let gt = &trace.grads[t];
        let fro = gt.fro_norm();
        let (spec_norm, sr) = if fro == 0.0 {
            (0.0, None)
        } else {
            let s1 = spectral_norm(gt)?;
            (s1, Some(fro * fro / (s1 * s1)))
        };
        let ratio = match prev_fro {
            Some(p) if p > 0.0 => Some(fro / p),
            _ => None,
        };
        let bound_rhs = stable_rank_bound_rhs(&trace, t).ok();
        trace.rows.push(TraceRow {
            t,
            fro_norm: fro,
            spec_norm,
            stable_rank: sr,
            bound_rhs,
            ratio,
        });
        prev_fro = Some(fro);
    }
    Ok(trace)
}

/// `sr(G_{t0}∥) + r^{t−t0} · ‖G_{t0} − G_{t0}∥‖_F² / ‖G_{t0}∥‖_2²` with
/// `r = ((1 − ηλ2)/(1 − ηλ1))²`.
pub fn stable_rank_bound_rhs(trace: &DynamicsTrace, t: usize) -> Result<f64> {
    let r = trace
        .spectral
        .decay_ratio
        .ok_or_else(|| Error::UndefinedBound("S has a single distinct eigenvalue".into()))?;
    if t < trace.t0 {
        return Err(Error::UndefinedBound(format!(
            "t = {t} precedes the onset t0 = {}",
            trace.t0
        )));
    }
    let (sr_par, resid) = trace.bound_terms.ok_or_else(|| {
        Error::UndefinedBound("G_t0 has no component in the lowest eigenspace".into())
    })?;
    Ok(sr_par + r.powi((t - trace.t0) as i32) * resid)
}

/// Least-squares slope of `log(sr(G_t) − sr(G∥))` over the trace tail,
/// returned as a per-step ratio together with the number of points used.
///
/// Points enter once the excess has fallen below `upper` and while it stays
/// above `lower`.
pub fn excess_decay_rate(trace: &DynamicsTrace, upper: f64, lower: f64) -> Option<(f64, usize)> {
    let sr_par = trace.parallel_stable_rank()?;
    let mut pts = Vec::new();
    let mut started = false;
    for row in trace.rows.iter().skip(trace.t0) {
        let Some(sr) = row.stable_rank else { break };
        let excess = sr - sr_par;
        if !started {
            if excess > 0.0 && excess <= upper {
                started = true;
            } else {
                continue;
            }
        }
        if !(excess > lower) {
            break;
        }
        pts.push((row.t as f64, excess.ln()));
    }
    if pts.len() < 5 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(((sxy / sxx).exp(), pts.len()))
}

pub(crate) mod matrix_serde {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    use crate::linalg::Matrix;

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.rows()).map(|i| m.row(i).to_vec()).collect();
        serde::Serialize::serialize(&rows, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        Matrix::from_rows(&refs).map_err(D::Error::custom)
    }
}

pub(crate) mod matrix_list {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::linalg::Matrix;

    #[derive(Serialize, Deserialize)]
    struct Wrapped(#[serde(with = "super::matrix_serde")] Matrix);

    pub fn serialize<S: Serializer>(list: &[Matrix], s: S) -> Result<S::Ok, S::Error> {
        let wrapped: Vec<Wrapped> = list.iter().cloned().map(Wrapped).collect();
        wrapped.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Matrix>, D::Error> {
        let wrapped: Vec<Wrapped> = Vec::deserialize(d)?;
        Ok(wrapped.into_iter().map(|w| w.0).collect())
    }
}
