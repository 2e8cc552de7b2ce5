use proptest::prelude::*;

use galore_core::harness::Batcher;
use galore_core::linalg::{kron, stable_rank, svd_thin, unvec, vec, Matrix};
use galore_core::memory::{estimate_layer, LayerDims, Method};
use galore_core::optim::{AdamHyper, AdamState, GaLoreConfig, GaLoreOptimState, QuantizedMatrix};
use galore_core::projector::Projector;
use galore_core::random::seeded;

fn sized(r: usize, c: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-10.0f64..10.0, r * c).prop_map(move |d| Matrix::new(r, c, d).unwrap())
}

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| sized(r, c))
}

/// Two matrices of one random shape.
fn pair(max: usize) -> impl Strategy<Value = (Matrix, Matrix)> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| (sized(r, c), sized(r, c)))
}

/// `(B, X, C)` with compatible shapes for `B X C`.
fn chain(max: usize) -> impl Strategy<Value = (Matrix, Matrix, Matrix)> {
    (1..=max, 1..=max, 1..=max, 1..=max).prop_flat_map(|(a, b, c, d)| (sized(a, b), sized(b, c), sized(c, d)))
}

fn orthonormal_cols(q: &Matrix) -> f64 {
    q.t_matmul(q).unwrap().sub(&Matrix::identity(q.cols())).unwrap().max_abs()
}

proptest! {
    #[test]
    fn svd_reconstructs_with_orthonormal_factors(a in matrix(9, 9)) {
        let svd = svd_thin(&a).unwrap();
        let scale = a.max_abs().max(1.0);
        prop_assert!(svd.reconstruct().max_abs_diff(&a) <= 1e-10 * scale);
        prop_assert!(orthonormal_cols(&svd.u) <= 1e-10);
        prop_assert!(orthonormal_cols(&svd.v) <= 1e-10);
        prop_assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(svd.s.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn stable_rank_lies_between_one_and_min_dim(a in matrix(8, 8)) {
        prop_assume!(a.fro_norm() > 1e-6);
        let sr = stable_rank(&a).unwrap();
        let cap = a.rows().min(a.cols()) as f64;
        prop_assert!(sr >= 1.0 - 1e-12 && sr <= cap + 1e-12);
    }

    #[test]
    fn projection_is_idempotent_and_contractive((a, b) in pair(8), r in 1usize..8) {
        prop_assume!(a.fro_norm() > 1e-6);
        let (m, n) = a.shape();
        let mut p = Projector::new(m, n, r, 1).unwrap();
        p.refresh(&a, 0).unwrap();
        let once = p.project_back(&p.project(&b).unwrap(), 1.0).unwrap();
        let twice = p.project_back(&p.project(&once).unwrap(), 1.0).unwrap();
        prop_assert!(once.max_abs_diff(&twice) <= 1e-10 * b.max_abs().max(1.0));
        prop_assert!(once.fro_norm() <= b.fro_norm() * (1.0 + 1e-12));
    }

    #[test]
    fn kron_acts_on_vec((b, x, c) in chain(4)) {
        let direct = b.matmul(&x).unwrap().matmul(&c).unwrap();
        let k = kron(&c.transpose(), &b).unwrap();
        let via = unvec(&k.matvec(&vec(&x)).unwrap(), direct.rows(), direct.cols()).unwrap();
        prop_assert!(via.max_abs_diff(&direct) <= 1e-9 * direct.max_abs().max(1.0));
    }

    #[test]
    fn int8_error_within_absmax_over_127(
        data in prop::collection::vec(-1e6f64..1e6, 1..300),
        block in 1usize..80,
    ) {
        let x = Matrix::new(1, data.len(), data).unwrap();
        let back = QuantizedMatrix::quantize(&x, block).unwrap().dequantize();
        for (chunk, deq) in x.as_slice().chunks(block).zip(back.as_slice().chunks(block)) {
            let absmax = chunk.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for (v, d) in chunk.iter().zip(deq) {
                prop_assert!((v - d).abs() <= absmax / 127.0);
            }
        }
    }

    #[test]
    fn adam_first_step_is_eta_times_sign(g in matrix(5, 5), eta in 1e-4f64..1.0) {
        prop_assume!(g.as_slice().iter().all(|v| v.abs() > 1e-3));
        let mut st = AdamState::new(g.rows(), g.cols(), AdamHyper::default()).unwrap();
        let step = st.step(&g, eta).unwrap();
        for (s, gi) in step.as_slice().iter().zip(g.as_slice()) {
            prop_assert!((s - eta * gi.signum()).abs() <= eta * 1e-4);
        }
    }

    #[test]
    fn galore_state_matches_accounting(rows in 1usize..24, cols in 1usize..24, r in 1usize..24) {
        let r = r.min(rows.min(cols));
        let state = GaLoreOptimState::new(rows, cols, &GaLoreConfig::new(r)).unwrap();
        let (m, n) = (rows.min(cols), rows.max(cols));
        prop_assert_eq!(state.state_entries(), m * r + 2 * n * r);
    }

    #[test]
    fn memory_orderings_hold(m in 1usize..4096, extra in 0usize..4096, r in 1usize..4096) {
        let n = m + extra;
        let r = r.min(m);
        let d = LayerDims::new(m, n, r).unwrap();
        let full = estimate_layer(d, Method::Full, 2).unwrap();
        let gal = estimate_layer(d, Method::GaLore, 2).unwrap();
        let lora = estimate_layer(d, Method::Lora, 2).unwrap();
        prop_assert!(gal.total_bytes < lora.total_bytes);
        let (m, n, r) = (m as u64, n as u64, r as u64);
        prop_assert_eq!(gal.optimizer_params < full.optimizer_params, (m + 2 * n) * r < 2 * m * n);
    }

    #[test]
    fn batcher_visits_each_sample_once_per_epoch(len in 1usize..60, batch in 1usize..20, seed in 0u64..1000) {
        let data: Vec<usize> = (0..len).collect();
        let mut b = Batcher::new(len, batch);
        let mut rng = seeded(seed);
        let per_epoch = len.div_ceil(batch);
        let mut seen = Vec::new();
        for _ in 0..per_epoch {
            seen.extend(b.next(&mut rng, &data));
        }
        seen.truncate(len);
        seen.sort_unstable();
        prop_assert_eq!(seen, data);
    }
}
