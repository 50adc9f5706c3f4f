use dsne::highdim::{build_conditional_p, entropy_of_row, p_row};
use dsne::knn::nearest_neighbors;
use dsne::optimizer::{update_velocity_embedding, EmbeddingState, Problem, SolverConfig};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn randn(seed: u64, n: usize, d: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, d), || rng.sample(rand_distr::StandardNormal))
}

fn rotation(d: usize, angles: &[f64]) -> Array2<f64> {
    let mut r = Array2::<f64>::eye(d);
    for (a, (i, j)) in angles.iter().zip([(0, 1), (1, 2), (0, 2)]) {
        if j >= d {
            continue;
        }
        let mut g = Array2::<f64>::eye(d);
        g[[i, i]] = a.cos();
        g[[j, j]] = a.cos();
        g[[i, j]] = -a.sin();
        g[[j, i]] = a.sin();
        r = r.dot(&g);
    }
    r
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn map_rigid_motion_leaves_loss_unchanged(
        seed in any::<u64>(),
        d in 2usize..=3,
        angles in prop::array::uniform3(-3.1f64..3.1),
        shift in prop::array::uniform3(-50.0f64..50.0),
        beta in 0.1f64..5.0,
    ) {
        let n = 14;
        let x = randn(seed, n, 5);
        let v = randn(seed ^ 1, n, 5);
        let y = randn(seed ^ 2, n, d);
        let r = rotation(d, &angles);
        let t = Array1::from(shift[..d].to_vec());
        let y2 = y.dot(&r.t()) + &t;
        let a = Problem::build(x.view(), v.view(), y.view(), 4, 3.0, 0).unwrap();
        let b = Problem::build(x.view(), v.view(), y2.view(), 4, 3.0, 0).unwrap();
        let w = randn(seed ^ 3, n, d);
        for i in 0..n {
            let wi = w.row(i).to_vec();
            let rw = r.dot(&w.row(i)).to_vec();
            prop_assert!(close(a.point(i).loss(&wi, beta), b.point(i).loss(&rw, beta), 1e-10));
            let ga = Array1::from(a.point(i).full_gradient(&wi, beta));
            let gb = Array1::from(b.point(i).full_gradient(&rw, beta));
            let rotated = r.dot(&ga);
            for (p, q) in rotated.iter().zip(gb.iter()) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn data_rigid_motion_leaves_p_unchanged(
        seed in any::<u64>(),
        angles in prop::array::uniform3(-3.1f64..3.1),
        shift in prop::array::uniform3(-50.0f64..50.0),
    ) {
        let n = 20;
        let x = randn(seed, n, 3);
        let v = randn(seed ^ 1, n, 3);
        let r = rotation(3, &angles);
        let x2 = x.dot(&r.t()) + &Array1::from(shift.to_vec());
        let v2 = v.dot(&r.t());
        let ta = nearest_neighbors(x.view(), 5, 0).unwrap();
        let tb = nearest_neighbors(x2.view(), 5, 0).unwrap();
        let a = build_conditional_p(x.view(), v.view(), &ta, 3.0).unwrap();
        let b = build_conditional_p(x2.view(), v2.view(), &tb, 3.0).unwrap();
        for i in 0..n {
            prop_assert_eq!(ta.row(i), tb.row(i));
            for j in 0..5 {
                prop_assert!((a.p_tilde[[i, j]] - b.p_tilde[[i, j]]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn velocity_scale_leaves_p_unchanged(seed in any::<u64>(), c in 1e-3f64..1e3) {
        let x = randn(seed, 25, 4);
        let v = randn(seed ^ 7, 25, 4);
        let table = nearest_neighbors(x.view(), 6, 0).unwrap();
        let a = build_conditional_p(x.view(), v.view(), &table, 4.0).unwrap();
        let vs = v.mapv(|e| e * c);
        let b = build_conditional_p(x.view(), vs.view(), &table, 4.0).unwrap();
        for (p, q) in a.p_tilde.iter().zip(b.p_tilde.iter()) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn rows_are_distributions(seed in any::<u64>(), k in 1usize..12, frac in 0.0f64..1.0) {
        let x = randn(seed, 30, 5);
        let v = randn(seed ^ 9, 30, 5);
        let perp = 1.0 + frac * k as f64;
        let table = nearest_neighbors(x.view(), k, seed).unwrap();
        let cond = build_conditional_p(x.view(), v.view(), &table, perp).unwrap();
        for i in 0..30 {
            let full = cond.p_self[i] + cond.p.row(i).sum();
            prop_assert!((full - 1.0).abs() < 1e-10);
            prop_assert!((cond.p_tilde.row(i).sum() - 1.0).abs() < 1e-10);
            prop_assert!(cond.p_tilde.row(i).iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn loss_ignores_embedding_length(seed in any::<u64>(), c in 1e-3f64..1e3, beta in 0.1f64..6.0) {
        let problem = Problem::build(
            randn(seed, 12, 4).view(),
            randn(seed ^ 1, 12, 4).view(),
            randn(seed ^ 2, 12, 2).view(),
            5,
            2.0,
            0,
        )
        .unwrap();
        let w = randn(seed ^ 3, 12, 2);
        for i in 0..12 {
            let wi = w.row(i).to_vec();
            let scaled: Vec<f64> = wi.iter().map(|a| a * c).collect();
            let pp = problem.point(i);
            prop_assert!((pp.loss(&wi, beta) - pp.loss(&scaled, beta)).abs() <= 1e-12 * (1.0 + pp.loss(&wi, beta).abs()));
        }
    }

    #[test]
    fn gradient_is_tangent(seed in any::<u64>(), beta in 0.1f64..6.0, d in 2usize..=3) {
        let problem = Problem::build(
            randn(seed, 16, 5).view(),
            randn(seed ^ 1, 16, 5).view(),
            randn(seed ^ 2, 16, d).view(),
            6,
            3.0,
            0,
        )
        .unwrap();
        let w = randn(seed ^ 3, 16, d);
        for i in 0..16 {
            let wi = w.row(i).to_vec();
            let g = problem.point(i).scaled_gradient(&wi, beta);
            let wn = wi.iter().map(|a| a * a).sum::<f64>().sqrt();
            let dot: f64 = g.iter().zip(&wi).map(|(a, b)| a * b / wn).sum();
            prop_assert!(dot.abs() < 1e-12);
        }
    }

    #[test]
    fn sweeps_keep_unit_directions(seed in any::<u64>(), sweeps in 1usize..20) {
        let problem = Problem::build(
            randn(seed, 18, 5).view(),
            randn(seed ^ 1, 18, 5).view(),
            randn(seed ^ 2, 18, 2).view(),
            5,
            3.0,
            0,
        )
        .unwrap();
        let mut state = EmbeddingState::random(18, 2, seed, &problem.cond.active);
        let config = SolverConfig::default();
        for it in 0..sweeps {
            state.iter = it;
            update_velocity_embedding(&mut state, &problem, &config).unwrap();
            for row in state.w.outer_iter() {
                prop_assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn entropy_decreases_with_beta(cos in prop::collection::vec(-1.0f64..1.0, 1..10)) {
        prop_assume!(cos.iter().any(|&c| c < 1.0 - 1e-6));
        let mut prev = f64::INFINITY;
        for s in 0..40 {
            let beta = 0.01 * 1.2f64.powi(s);
            let r = p_row(&cos, beta).unwrap();
            let h = entropy_of_row(r.p_self, &r.p);
            prop_assert!(h < prev, "beta {} h {} prev {}", beta, h, prev);
            prev = h;
        }
    }
}
