use super::*;
use approx::assert_relative_eq;
use proptest::prelude::*;
use std::f64::consts::LN_2;

fn model(order: usize, gamma: f64) -> EntropyModel {
    EntropyModel::new(ClosureConfig::partially_regularized(order, gamma)).unwrap()
}

/// Langevin function `coth(a) - 1/a`, the M1 mean of `v` under `exp(a v)`.
fn langevin(a: f64) -> f64 {
    if a.abs() < 1e-4 {
        return a / 3.0;
    }
    1.0 / a.tanh() - 1.0 / a
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += h;
            m[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn dual_objective_full_examples() {
    let m = model(1, 0.0);
    assert_relative_eq!(m.dual_objective_full(&[0.0, 0.0], &[1.0, 0.0], 0.0).unwrap(), 2.0, epsilon = 1e-14);
    assert_relative_eq!(
        m.dual_objective_full(&[-LN_2, 0.0], &[1.0, 0.0], 0.0).unwrap(),
        1.0 + LN_2,
        epsilon = 1e-14
    );
    assert_relative_eq!(
        m.dual_objective_full(&[0.0, 1.0], &[1.0, 0.0], 0.1).unwrap(),
        2.0 * 1f64.sinh() + 0.05,
        epsilon = 1e-13
    );
}

#[test]
fn overflow_guard_trips() {
    let m = model(1, 0.0);
    assert!(matches!(
        m.dual_objective_full(&[0.0, 80.0], &[1.0, 0.0], 0.0),
        Err(Error::Overflow(_))
    ));
}

#[test]
fn dual_objective_reduced_examples() {
    let m = model(1, 0.0);
    for gamma in [0.0, 0.1, 3.0] {
        assert_relative_eq!(m.dual_objective_reduced(&[0.0], &[0.0], gamma).unwrap(), 1.0 + LN_2, epsilon = 1e-14);
    }
    assert_relative_eq!(m.dual_objective_reduced(&[0.0], &[0.5], 0.0).unwrap(), 1.0 + LN_2, epsilon = 1e-14);
    assert_relative_eq!(
        m.dual_objective_reduced(&[1.0], &[0.5], 0.0).unwrap(),
        1.0 + (2.0 * 1f64.sinh()).ln() - 0.5,
        epsilon = 1e-13
    );
}

#[test]
fn reduced_gradient_examples() {
    let m = model(1, 0.0);
    assert!(m.reduced_gradient(&[0.0], &[0.0], 0.0).unwrap()[0].abs() < 1e-15);
    assert_relative_eq!(m.reduced_gradient(&[0.0], &[0.5], 0.0).unwrap()[0], -0.5, epsilon = 1e-15);
}

#[test]
fn reduced_hessian_examples() {
    let m = model(1, 0.0);
    assert_relative_eq!(m.reduced_hessian(&[0.0], 0.0).unwrap()[(0, 0)], 1.0 / 3.0, epsilon = 1e-14);
    assert_relative_eq!(m.reduced_hessian(&[0.0], 0.1).unwrap()[(0, 0)], 1.0 / 3.0 + 0.1, epsilon = 1e-14);
}

#[test]
fn reduced_derivatives_match_finite_differences() {
    let mut rng = crate::rng::substream(11, "fd");
    use rand::Rng;
    for order in 1..=3 {
        let m = model(order, 0.0);
        for _ in 0..20 {
            let beta: Vec<f64> = (0..order).map(|_| rng.random_range(-4.0..4.0)).collect();
            let w: Vec<f64> = (0..order).map(|_| rng.random_range(-0.5..0.5)).collect();
            let gamma = 0.05;
            let g = m.reduced_gradient(&beta, &w, gamma).unwrap();
            let fd = central_diff(|b| m.dual_objective_reduced(b, &w, gamma).unwrap(), &beta, 1e-5);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()), "{a} vs {b}");
            }
            let h = m.reduced_hessian(&beta, gamma).unwrap();
            for j in 0..order {
                let col = central_diff(|b| m.reduced_gradient(b, &w, gamma).unwrap()[j], &beta, 1e-5);
                for i in 0..order {
                    assert!((h[(j, i)] - col[i]).abs() <= 1e-6 * (1.0 + h[(j, i)].abs()));
                }
            }
        }
    }
}

#[test]
fn solve_reduced_at_center_is_zero() {
    for gamma in [0.0, 0.01, 1.0] {
        let r = model(1, gamma).solve_reduced(&[0.0], gamma).unwrap();
        assert!(r.beta[0].abs() < 1e-14);
        assert_eq!(r.iterations, 0);
    }
}

#[test]
fn solve_reduced_m1_matches_langevin_root() {
    let oracle = bisect(|a| langevin(a) - 0.5, 0.1, 10.0);
    let r = model(1, 0.0).solve_reduced(&[0.5], 0.0).unwrap();
    assert!((r.beta[0] - oracle).abs() < 1e-8, "{} vs {oracle}", r.beta[0]);
    assert!((oracle - 1.796).abs() < 1e-3);
}

#[test]
fn solve_reduced_m1_regularized_matches_grid_search() {
    let gamma = 0.01;
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=50_000 {
        let b = i as f64 * 1e-4;
        let r = (langevin(b) + gamma * b - 0.5).abs();
        if r < best.0 {
            best = (r, b);
        }
    }
    let r = model(1, gamma).solve_reduced(&[0.5], gamma).unwrap();
    assert!((r.beta[0] - best.1).abs() <= 1e-4, "{} vs {}", r.beta[0], best.1);
    assert!(r.grad_norm <= 1e-8);
}

#[test]
fn vartheta_examples() {
    let m = model(1, 0.0);
    assert_relative_eq!(m.vartheta(&[0.0]).unwrap(), -LN_2, epsilon = 1e-14);
    assert_relative_eq!(m.vartheta(&[1.0]).unwrap(), -(2.0 * 1f64.sinh()).ln(), epsilon = 1e-13);
}

#[test]
fn lift_multiplier_examples() {
    let m = model(1, 0.0);
    let a = m.lift_multiplier(&[0.0], 1.0).unwrap();
    assert_relative_eq!(a[0], -LN_2, epsilon = 1e-15);
    let a = m.lift_multiplier(&[0.0], 2.0).unwrap();
    assert!(a[0].abs() < 1e-15 && a[1] == 0.0);
    assert!(matches!(m.lift_multiplier(&[0.0], 0.0), Err(Error::Domain(_))));
}

#[test]
fn lifted_multiplier_is_full_optimum() {
    for (order, gamma) in [(1, 0.0), (2, 0.01), (3, 0.1)] {
        let m = model(order, gamma);
        let mut u = m.table().spec().isotropic(3.0).0;
        u[1] = 0.9;
        let sol = m.solve(&u).unwrap();
        let res = m.dual_gradient_full(&sol.alpha, &u, gamma).unwrap();
        let norm = res.iter().map(|r| r * r).sum::<f64>().sqrt();
        assert!(norm <= 1e-10 * u[0], "order {order}: residual {norm}");
    }
}

#[test]
fn entropy_gradient_examples() {
    assert_eq!(entropy_gradient(&[0.3, 2.0], 0.0), vec![0.3, 2.0]);
    let g = entropy_gradient(&[0.3, 2.0], 0.1);
    assert_relative_eq!(g[0], 0.1, epsilon = 1e-15);
    assert_eq!(entropy_gradient(&[0.0, 3.0, 4.0], 0.01), vec![-0.125, 3.0, 4.0]);
}

#[test]
fn entropy_value_examples() {
    let m = model(1, 0.0);
    let u = [1.0, 0.0];
    let sol = m.solve(&u).unwrap();
    assert_relative_eq!(m.entropy_value(&u, &sol, 0.0).unwrap(), -1.0 - LN_2, epsilon = 1e-14);
    assert_relative_eq!(sol.h, -1.0 - LN_2, epsilon = 1e-14);

    for gamma in [0.0, 0.01, 0.1] {
        let m = model(1, gamma);
        let u = [2.0, 1.0];
        let sol = m.solve(&u).unwrap();
        let (h_hat, _) = m.reduced_entropy(&[0.5], gamma).unwrap();
        let dual = m.entropy_value(&u, &sol, gamma).unwrap();
        assert!((dual - (2.0 * h_hat + 2.0 * 2f64.ln())).abs() < 1e-10);
        assert!((dual - sol.h).abs() < 1e-10);
    }
}

#[test]
fn reduced_entropy_gradient_is_multiplier() {
    for (order, gamma) in [(1, 0.0), (2, 0.01), (3, 0.001)] {
        let m = model(order, gamma);
        let mut w = m.table().spec().isotropic(1.0).0[1..].to_vec();
        w[0] = 0.3;
        let (_, beta) = m.reduced_entropy(&w, gamma).unwrap();
        let step = 1e-5 * (1.0 + w.iter().map(|x| x * x).sum::<f64>().sqrt());
        let fd = central_diff(|x| m.reduced_entropy(x, gamma).unwrap().0, &w, step);
        for (a, b) in beta.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-5 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }
}

#[test]
fn psi_examples() {
    let m = model(1, 0.0);
    assert!(m.psi(&[0.0], 0.0).unwrap()[0].abs() < 1e-15);
    for gamma in [0.01, 0.5] {
        assert_eq!(m.psi(&[0.0], gamma).unwrap(), m.psi(&[0.0], 0.0).unwrap());
    }
}

#[test]
fn g_ansatz_moments_are_scaled_primal_moments() {
    let gamma = 0.05;
    let m = model(2, gamma);
    let u = [1.7, 0.6, 0.7];
    let sol = m.solve(&u).unwrap();
    let u_g = m.moments_of_ansatz(&sol.g).unwrap();
    let u_tilde = m.moments_of_ansatz(&sol.alpha).unwrap();
    let beta_sq: f64 = sol.beta.iter().map(|b| b * b).sum();
    let c = (-0.5 * gamma * beta_sq * M0).exp();
    for (a, b) in u_g.iter().zip(&u_tilde) {
        assert!((a - c * b).abs() < 1e-10);
    }
    let f = m.reconstruct_density(&sol.g);
    let nodes = m.density_at_nodes(&sol.g).unwrap();
    let v = m.table().rule().nodes()[3];
    assert_relative_eq!(f(v), nodes[3], max_relative = 1e-13);
}

#[test]
fn fully_regularized_matches_grid_search() {
    let m = model(1, 0.0);
    let big_gamma = 0.1;
    let u = [1.0, 0.0];
    let phi = |a0: f64, a1: f64| {
        let e = if a1 == 0.0 { 2.0 } else { 2.0 * a1.sinh() / a1 };
        (a0).exp() * e - a0 * u[0] - a1 * u[1] + 0.5 * big_gamma * (a0 * a0 + a1 * a1)
    };
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=2000 {
        let a0 = -1.5 + i as f64 * 1e-3;
        for j in 0..=200 {
            let a1 = -0.1 + j as f64 * 1e-3;
            let v = phi(a0, a1);
            if v < best.0 {
                best = (v, a0, a1);
            }
        }
    }
    let r = m.solve_fully_regularized(&u, big_gamma).unwrap();
    assert!((r.x[0] - best.1).abs() <= 1e-3);
    assert!((r.x[1] - best.2).abs() <= 1e-3);
    // the penalty shifts alpha_0 away from -log 2
    assert!((r.x[0] + LN_2).abs() > 1e-2);
    assert!(r.grad_norm <= 1e-8);
}

#[test]
fn fully_regularized_condition_bound_and_limit() {
    let m = model(2, 0.0);
    let u = [1.3, 0.4, 0.6];
    let reference = m.solve(&u).unwrap();
    let mut prev = f64::INFINITY;
    for big_gamma in [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6] {
        let r = m.solve_fully_regularized(&u, big_gamma).unwrap();
        let h = m.dual_hessian_full(r.x.as_slice()).unwrap();
        let (_, lmax) = eigen_extremes(&h);
        assert!(condition_number(&r.hessian) <= 1.0 + lmax / big_gamma + 1e-9);
        let dist = r
            .x
            .iter()
            .zip(&reference.alpha)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(dist <= prev * 1.0001);
        prev = dist;
    }
    assert!(prev < 1e-4, "Gamma -> 0 limit distance {prev}");
}

#[test]
fn newton_boundary_behaviour() {
    let m = model(1, 0.0);
    assert!(m.solve_reduced(&[0.9], 0.0).is_ok());
    match m.solve_reduced(&[1.0], 0.0) {
        Err(Error::NonConvergence { .. }) | Err(Error::LineSearch { .. }) | Err(Error::Overflow(_)) => {}
        other => panic!("expected a boundary diagnostic, got {other:?}"),
    }
    // regularization makes the same input feasible
    assert!(m.solve_reduced(&[1.0], 0.01).is_ok());
}

#[test]
fn regularization_reduces_iteration_counts() {
    use rand::Rng;
    let m = model(2, 0.0);
    let mut rng = crate::rng::substream(5, "batch");
    let mut plain = 0;
    let mut regularized = 0;
    for _ in 0..50 {
        let beta: Vec<f64> = (0..2).map(|_| rng.random_range(-15.0..15.0)).collect();
        let w = m.psi(&beta, 0.0).unwrap();
        plain += m.solve_reduced(&w, 0.0).unwrap().iterations;
        regularized += m.solve_reduced(&w, 1e-2).unwrap().iterations;
    }
    assert!(regularized <= plain, "{regularized} > {plain}");
}

#[test]
fn config_validation() {
    let mut c = ClosureConfig::partially_regularized(3, 0.1);
    c.quad_order = 3;
    assert!(EntropyModel::new(c).is_err());
    let c = ClosureConfig::partially_regularized(1, -1.0);
    assert!(c.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vartheta_normalizes_density(b in prop::collection::vec(-10.0f64..10.0, 1..4)) {
        let m = model(b.len(), 0.0);
        let alpha = m.lift_multiplier(&b, 1.0).unwrap();
        let mass = m.moments_of_ansatz(&alpha).unwrap()[0];
        prop_assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn regularized_condition_number_bound(b in prop::collection::vec(-10.0f64..10.0, 1..4), gamma in 1e-4f64..1.0) {
        let m = model(b.len(), gamma);
        let h0 = m.reduced_hessian(&b, 0.0).unwrap();
        let (_, lmax) = eigen_extremes(&h0);
        let cond = condition_number(&m.reduced_hessian(&b, gamma).unwrap());
        prop_assert!(cond <= 1.0 + lmax / gamma + 1e-9);
    }

    #[test]
    fn reduced_solve_is_scale_invariant(u1 in -0.8f64..0.8, u0 in 0.01f64..50.0, gamma in prop::sample::select(vec![0.0, 1e-2])) {
        let m = model(1, gamma);
        let base = m.solve(&[1.0, u1]).unwrap();
        let scaled = m.solve(&[u0, u0 * u1]).unwrap();
        prop_assert!((base.beta[0] - scaled.beta[0]).abs() <= 1e-12 * (1.0 + base.beta[0].abs()));
        prop_assert!((scaled.alpha[0] - base.alpha[0] - u0.ln()).abs() < 1e-12);
    }
}
