//! Self-check table run by `galore verify`.

use crate::error::Result;
use crate::linalg::{svd_thin, Matrix};
use crate::memory::{estimate_layer, LayerDims, Method};
use crate::models::{finite_diff_grad, Activation, Loss, ReversibleNet, Sample};
use crate::optim::{q8_roundtrip, AdamHyper, AdamState, GaLoreConfig, GaLoreOptimState, InnerKind};
use crate::random::{gaussian_matrix, gaussian_vec, seeded};
use crate::theory::{contraction_check, families, simulate_dynamics};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VerifyOptions {
    /// Run the Adam check with bias correction switched off. The check
    /// must then fail; used to confirm the oracle has teeth.
    pub mutate_bias_correction: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub property: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        let width = self.checks.iter().map(|c| c.property.len()).max().unwrap_or(0);
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("{status}  {:<width$}  {}\n", c.property, c.detail));
        }
        out
    }
}

fn check(property: &'static str, run: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match run() {
        Ok((passed, detail)) => Check { property, passed, detail },
        Err(e) => Check {
            property,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn truncated_svd() -> Result<(bool, String)> {
    let mut rng = seeded(11);
    let a = gaussian_matrix(&mut rng, 12, 9);
    let svd = svd_thin(&a)?;
    let mut worst: f64 = 0.0;
    for r in 1..9 {
        let ar = Matrix::from_fn(12, 9, |i, j| (0..r).map(|k| svd.u.get(i, k) * svd.s[k] * svd.v.get(j, k)).sum());
        let err = a.sub(&ar)?.fro_norm_sq();
        let tail: f64 = svd.s[r..].iter().map(|s| s * s).sum();
        worst = worst.max((err - tail).abs() / tail);
        // A random rank-r projection does no better.
        let basis = crate::random::orthonormal_matrix(&mut rng, 12, r);
        let other = basis.matmul(&basis.t_matmul(&a)?)?;
        if a.sub(&other)?.fro_norm_sq() < err - 1e-10 {
            return Ok((false, format!("random rank-{r} projection beat the SVD")));
        }
    }
    Ok((worst <= 1e-8, format!("max relative tail error {worst:.1e}")))
}

/// Adam written out entry by entry, independent of `AdamState`.
fn adam_reference(grads: &[Matrix], eta: f64) -> Vec<Vec<f64>> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let len = grads[0].len();
    let (mut m, mut v) = (vec![0.0; len], vec![0.0; len]);
    grads
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let t = (k + 1) as i32;
            g.as_slice()
                .iter()
                .enumerate()
                .map(|(i, &gi)| {
                    m[i] = b1 * m[i] + (1.0 - b1) * gi;
                    v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                    let mh = m[i] / (1.0 - b1.powi(t));
                    let vh = v[i] / (1.0 - b2.powi(t));
                    eta * mh / (vh.sqrt() + eps)
                })
                .collect()
        })
        .collect()
}

fn adam_matches_reference(mutate: bool) -> Result<(bool, String)> {
    let mut rng = seeded(12);
    let grads: Vec<Matrix> = (0..25).map(|_| gaussian_matrix(&mut rng, 4, 3)).collect();
    let expected = adam_reference(&grads, 0.01);
    let hyper = AdamHyper {
        bias_correction: !mutate,
        ..AdamHyper::default()
    };
    let mut state = AdamState::new(4, 3, hyper)?;
    let mut worst: f64 = 0.0;
    for (g, want) in grads.iter().zip(&expected) {
        let got = state.step(g, 0.01)?;
        for (x, y) in got.as_slice().iter().zip(want) {
            worst = worst.max((x - y).abs() / y.abs().max(1e-12));
        }
    }
    Ok((worst <= 1e-10, format!("max relative deviation {worst:.1e} over 25 steps")))
}

fn full_rank_identity_is_ascent() -> Result<(bool, String)> {
    let mut rng = seeded(13);
    let target = gaussian_matrix(&mut rng, 5, 7);
    let mut w_plain = gaussian_matrix(&mut rng, 5, 7);
    let mut w_gal = w_plain.clone();
    let cfg = GaLoreConfig {
        alpha: 1.0,
        inner: InnerKind::Identity,
        switch_freq: 7,
        ..GaLoreConfig::new(5)
    };
    let mut state = GaLoreOptimState::new(5, 7, &cfg)?;
    let mut worst: f64 = 0.0;
    for step in 0..50 {
        let g_plain = target.sub(&w_plain)?;
        w_plain.axpy(0.1, &g_plain)?;
        let g = target.sub(&w_gal)?;
        state.step(&mut w_gal, &g, 0.1, step)?;
        worst = worst.max(w_gal.sub(&w_plain)?.fro_norm() / w_plain.fro_norm());
    }
    Ok((worst <= 1e-10, format!("max relative weight gap {worst:.1e} over 50 steps")))
}

fn backprop_vs_finite_differences() -> Result<(bool, String)> {
    let mut rng = seeded(14);
    let net = ReversibleNet::random(&mut rng, &[5, 6, 4, 3], Activation::leaky(), Loss::LogSoftmax, 1.0)?;
    let batch: Vec<Sample> = (0..4)
        .map(|k| {
            let mut y = vec![0.0; 3];
            y[k % 3] = 1.0;
            Sample::new(gaussian_vec(&mut rng, 5), y)
        })
        .collect();
    let exact = net.backward(&batch)?;
    let approx = finite_diff_grad(&net, &batch, 1e-6)?;
    let worst = exact
        .grads
        .iter()
        .zip(&approx.grads)
        .map(|(a, b)| a.max_abs_diff(b))
        .fold(0.0, f64::max);
    Ok((worst <= 1e-5, format!("max abs deviation {worst:.1e}")))
}

fn int8_roundtrip() -> Result<(bool, String)> {
    let mut rng = seeded(15);
    let x = gaussian_matrix(&mut rng, 30, 20);
    let (blocks, back) = q8_roundtrip(&x, 64)?;
    let mut worst_ratio: f64 = 0.0;
    for (k, chunk) in x.as_slice().chunks(64).enumerate() {
        let absmax = chunk.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let bound = absmax / 127.0;
        for (i, v) in chunk.iter().enumerate() {
            let err = (v - back.as_slice()[k * 64 + i]).abs();
            worst_ratio = worst_ratio.max(err / bound);
        }
    }
    Ok((
        worst_ratio <= 1.0 + 1e-12,
        format!("{} blocks, worst error {worst_ratio:.3} of absmax/127", blocks.len()),
    ))
}

fn stable_rank_bound() -> Result<(bool, String)> {
    let mut worst = f64::NEG_INFINITY;
    let suite = families::bound_suite(2, 120)?;
    for (_, spec) in &suite {
        let trace = simulate_dynamics(spec)?;
        for row in &trace.rows {
            if let (Some(sr), Some(rhs)) = (row.stable_rank, row.bound_rhs) {
                worst = worst.max(sr - rhs);
            }
        }
    }
    Ok((worst <= 1e-9, format!("{} specs, max sr − bound {worst:.1e}", suite.len())))
}

fn residual_contraction() -> Result<(bool, String)> {
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..3 {
        let rep = contraction_check(&families::contraction_instance(seed, 2, 0.05, 100)?)?;
        worst = worst.max(rep.worst_excess());
    }
    Ok((worst <= 1e-9, format!("max ratio − (1 − ηκ) {worst:.1e}")))
}

fn memory_ordering() -> Result<(bool, String)> {
    for (m, n, r) in [(512, 512, 128), (2048, 5461, 512), (64, 256, 16)] {
        let dims = LayerDims::new(m, n, r)?;
        let g = estimate_layer(dims, Method::GaLore, 2)?.total_bytes;
        let l = estimate_layer(dims, Method::Lora, 2)?.total_bytes;
        if g >= l {
            return Ok((false, format!("{m}x{n} r={r}: galore {g} >= lora {l}")));
        }
    }
    Ok((true, "3 layer shapes".into()))
}

pub fn run_verify(opts: VerifyOptions) -> VerifyReport {
    VerifyReport {
        checks: vec![
            check("truncated SVD is optimal", truncated_svd),
            check("Adam matches reference", || adam_matches_reference(opts.mutate_bias_correction)),
            check("full-rank identity reproduces ascent", full_rank_identity_is_ascent),
            check("backprop matches finite differences", backprop_vs_finite_differences),
            check("int8 error within absmax/127", int8_roundtrip),
            check("gradient stable rank below bound", stable_rank_bound),
            check("projected residual contracts", residual_contraction),
            check("low-rank projection uses less memory than LoRA", memory_ordering),
        ],
    }
}
