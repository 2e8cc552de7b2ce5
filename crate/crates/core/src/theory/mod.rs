//! Numerical checks of low-rank gradient dynamics: stable-rank decay under
//! constant coefficients and contraction of the projected residual.

mod contraction;
mod dynamics;
pub mod families;

pub use contraction::{contraction_check, ContractionReport, ContractionSpec, VANISH_TOL};
pub use dynamics::{
    excess_decay_rate, simulate_dynamics, stable_rank_bound_rhs, DynamicsSpec, DynamicsTrace,
    SpectralData, TraceRow, DISTINCT_TOL, MAX_DIM, PARALLEL_ZERO_TOL,
};

#[cfg(test)]
mod tests {
    use super::families::*;
    use super::*;
    use crate::error::Error;
    use crate::linalg::{kron, numerical_rank, vec, Matrix};
    use crate::projector::Projector;
    use crate::random::{gaussian_matrix, seeded};

    fn spec(a: Matrix, b: Matrix, c: Matrix, w0: Matrix, eta: f64, steps: usize) -> DynamicsSpec {
        DynamicsSpec {
            a: vec![a],
            b: vec![b],
            c: vec![c],
            w0,
            eta,
            steps,
            t0: 0,
        }
    }

    #[test]
    fn isotropic_case_scales_uniformly() {
        let mut rng = seeded(1);
        let a = gaussian_matrix(&mut rng, 3, 4);
        let s = spec(a, Matrix::identity(3), Matrix::identity(4), Matrix::zeros(3, 4), 0.2, 10);
        let tr = simulate_dynamics(&s).unwrap();
        assert!(tr.lambda2_undefined);
        assert!(matches!(stable_rank_bound_rhs(&tr, 3), Err(Error::UndefinedBound(_))));
        let sr0 = tr.rows[0].stable_rank.unwrap();
        for (t, row) in tr.rows.iter().enumerate() {
            let expected = tr.grads[0].scale(0.8f64.powi(t as i32));
            assert!(tr.grads[t].max_abs_diff(&expected) < 1e-14);
            assert!((row.stable_rank.unwrap() - sr0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_by_one_closed_form() {
        let a = Matrix::from_rows(&[&[1.0], &[1.0]]).unwrap();
        let s = spec(a, Matrix::from_diag(&[1.0, 2.0]), Matrix::identity(1), Matrix::zeros(2, 1), 0.1, 40);
        let tr = simulate_dynamics(&s).unwrap();
        assert!((tr.spectral.lambda1 - 1.0).abs() < 1e-15);
        assert!((tr.spectral.lambda2.unwrap() - 2.0).abs() < 1e-15);
        for t in [0usize, 5, 10, 40] {
            let g = &tr.grads[t];
            assert!((g.get(0, 0) - 0.9f64.powi(t as i32)).abs() < 1e-14);
            assert!((g.get(1, 0) - 0.8f64.powi(t as i32)).abs() < 1e-14);
        }
        // n = 1: every nonzero G is rank one.
        assert!((tr.rows[40].stable_rank.unwrap() - 1.0).abs() < 1e-12);
        // sr(G∥) = 1 and the residual term is (0.8/0.9)^{2t}·1.
        for t in [0usize, 5, 10] {
            let hand = 1.0 + (0.8f64 / 0.9).powi(2 * t as i32);
            assert!((stable_rank_bound_rhs(&tr, t).unwrap() - hand).abs() < 1e-12);
        }
    }

    #[test]
    fn bound_at_onset_and_inside_eigenspace() {
        let tr = simulate_dynamics(&commuting_spec(5, 20).unwrap()).unwrap();
        let par = &tr.g_parallel;
        let s1 = crate::linalg::spectral_norm(par).unwrap();
        let expected = crate::linalg::stable_rank(par).unwrap()
            + tr.grads[0].sub(par).unwrap().fro_norm_sq() / (s1 * s1);
        assert!((stable_rank_bound_rhs(&tr, 0).unwrap() - expected).abs() < 1e-12);

        // G0 = a single mode of S: second term vanishes.
        let b = Matrix::from_diag(&[1.0, 3.0]);
        let c = Matrix::from_diag(&[2.0, 5.0]);
        let a = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]).unwrap();
        let tr = simulate_dynamics(&spec(a, b, c, Matrix::zeros(2, 2), 0.05, 10)).unwrap();
        for t in 0..=10 {
            assert!((stable_rank_bound_rhs(&tr, t).unwrap() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn unstable_and_invalid_specs() {
        let a = Matrix::zeros(2, 2);
        let s = spec(a.clone(), Matrix::identity(2), Matrix::identity(2), a.clone(), 1.0, 3);
        assert!(matches!(simulate_dynamics(&s), Err(Error::Unstable { .. })));
        let not_psd = Matrix::from_diag(&[1.0, -1.0]);
        let s = spec(a.clone(), not_psd, Matrix::identity(2), a.clone(), 0.1, 3);
        assert!(simulate_dynamics(&s).is_err());
        let big = Matrix::zeros(33, 1);
        let s = spec(big.clone(), Matrix::identity(33), Matrix::identity(1), big, 0.1, 1);
        assert!(simulate_dynamics(&s).is_err());
    }

    #[test]
    fn recursion_matches_direct_gradient_and_vec_form() {
        let s = generic_coupled_spec(3, 30).unwrap();
        let tr = simulate_dynamics(&s).unwrap();
        // Replay W directly.
        let mut w = s.w0.clone();
        for t in 0..s.steps {
            w.axpy(s.eta, &s.gradient_at(&w).unwrap()).unwrap();
            let direct = s.gradient_at(&w).unwrap();
            assert!(direct.max_abs_diff(&tr.grads[t + 1]) < 1e-9);
        }
        // g_t = (I − ηS)^t g_0.
        let sm = s.s_matrix().unwrap();
        let (m, n) = s.shape();
        let step_mat = Matrix::identity(m * n).sub(&sm.scale(s.eta)).unwrap();
        let mut g = vec(&tr.grads[0]);
        for t in 1..=s.steps {
            g = step_mat.matvec(&g).unwrap();
            let mat = vec(&tr.grads[t]);
            for (x, y) in g.iter().zip(&mat) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn kron_spectrum_is_pairwise_products() {
        let mut rng = seeded(4);
        let b = crate::random::spd_matrix(&mut rng, 2, 0.1, 2.0);
        let c = crate::random::spd_matrix(&mut rng, 3, 0.1, 2.0);
        let eb = crate::linalg::sym_eig(&b).unwrap().values;
        let ec = crate::linalg::sym_eig(&c).unwrap().values;
        let mut products: Vec<f64> = ec.iter().flat_map(|x| eb.iter().map(move |y| x * y)).collect();
        products.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ek = crate::linalg::sym_eig(&kron(&c, &b).unwrap()).unwrap().values;
        for (x, y) in products.iter().zip(&ek) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn structured_families_respect_bound() {
        for (name, s) in bound_suite(2, 150).unwrap() {
            let tr = simulate_dynamics(&s).unwrap();
            for row in &tr.rows {
                let rhs = row.bound_rhs.unwrap_or_else(|| panic!("{name}: bound undefined"));
                assert!(row.stable_rank.unwrap() <= rhs + 1e-9, "{name} t={}", row.t);
            }
        }
    }

    #[test]
    fn two_mode_excess_is_geometric() {
        let s = two_mode_spec(0, 1500).unwrap();
        let tr = simulate_dynamics(&s).unwrap();
        let r = tr.spectral.decay_ratio.unwrap();
        let (rate, pts) = excess_decay_rate(&tr, 1e-2, 1e-9).unwrap();
        assert!(pts > 20);
        assert!((rate - r).abs() <= 1e-6, "{rate} vs {r}");
        assert!((tr.parallel_stable_rank().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_one_targets_keep_gradient_rank_low() {
        let (s, n_prime) = low_rank_spec(7, 60, true).unwrap();
        let tr = simulate_dynamics(&s).unwrap();
        for g in &tr.grads {
            assert!(numerical_rank(g, 1e-10).unwrap() <= n_prime);
        }
        assert!(tr.parallel_is_zero());
    }

    #[test]
    fn contraction_isotropic_and_zero() {
        let mut rng = seeded(9);
        let p = crate::random::orthonormal_matrix(&mut rng, 4, 2);
        let q = crate::random::orthonormal_matrix(&mut rng, 5, 2);
        let proj = Projector::from_factors(Some(p.clone()), Some(q.clone())).unwrap();
        let cs = ContractionSpec {
            a: vec![gaussian_matrix(&mut rng, 4, 5)],
            b: vec![Matrix::identity(4)],
            c: vec![Matrix::identity(5)],
            w0: Matrix::zeros(4, 5),
            projector: proj.clone(),
            eta: 0.1,
            steps: 50,
        };
        let rep = contraction_check(&cs).unwrap();
        assert!((rep.kappa - 1.0).abs() < 1e-12);
        for r in &rep.ratios[..50] {
            assert!((r - 0.9).abs() < 1e-12);
        }

        // Target orthogonal to the subspace on the left: R stays 0.
        let mut pc = Matrix::identity(4).sub(&p.matmul_t(&p).unwrap()).unwrap();
        pc = pc.matmul(&gaussian_matrix(&mut rng, 4, 5)).unwrap();
        let cs = ContractionSpec { a: vec![pc], ..cs };
        let rep = contraction_check(&cs).unwrap();
        assert!(rep.r_norms.iter().all(|&x| x < 1e-14));
    }

    #[test]
    fn contraction_recursion_matches_weight_replay() {
        let cs = contraction_instance(3, 2, 0.05, 40).unwrap();
        let rep = contraction_check(&cs).unwrap();
        let p = cs.projector.p().unwrap();
        let q = cs.projector.q().unwrap();
        let grad = |w: &Matrix| {
            let mut g = Matrix::zeros(w.rows(), w.cols());
            for ((a, b), c) in cs.a.iter().zip(&cs.b).zip(&cs.c) {
                g.axpy(1.0, &a.sub(&b.matmul(w).unwrap().matmul(c).unwrap()).unwrap()).unwrap();
            }
            g.scale(1.0 / cs.a.len() as f64)
        };
        let mut w = cs.w0.clone();
        for t in 0..40 {
            let r = p.t_matmul(&grad(&w)).unwrap().matmul(q).unwrap();
            assert!((r.fro_norm() - rep.r_norms[t]).abs() < 1e-10);
            w.axpy(cs.eta, &p.matmul(&r).unwrap().matmul_t(q).unwrap()).unwrap();
        }
        assert!(rep.worst_excess() <= 1e-9);
        let n_star = rep.predicted_steps.unwrap();
        assert!(rep.vanished_at.unwrap() <= n_star);
    }
}
