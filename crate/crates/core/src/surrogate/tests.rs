use super::*;
use crate::entropy::entropy_gradient;
use crate::rng::substream;
use crate::sampler::{generate, SamplerConfig};
use rand::Rng;
use std::f64::consts::LN_2;

#[test]
fn oracle_inference_at_isotropic_state() {
    let oracle = NewtonEntropy::new(1, 0.0).unwrap();
    let inf = infer(&oracle, &[1.0, 0.0]).unwrap();
    assert!((inf.g[0] + LN_2).abs() < 1e-14);
    assert!(inf.g[1].abs() < 1e-14);
    let f = inf.density();
    for v in [-1.0, -0.3, 0.0, 0.8] {
        assert!((f(v) - 0.5).abs() < 1e-14);
    }
}

#[test]
fn oracle_inference_matches_entropy_gradient() {
    for (order, gamma) in [(1, 0.0), (2, 0.01), (3, 0.1)] {
        let oracle = NewtonEntropy::new(order, gamma).unwrap();
        let model = oracle.model();
        let mut u = model.table().spec().isotropic(2.5).0;
        u[1] = 0.7;
        let sol = model.solve_with_gamma(&u, gamma).unwrap();
        let inf = infer(&oracle, &u).unwrap();
        let g = entropy_gradient(&sol.alpha, gamma);
        for (a, b) in inf.g.iter().zip(&g) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        assert!((inf.h - sol.h).abs() < 1e-10);
    }
}

#[test]
fn inference_is_scale_covariant() {
    let mut rng = substream(12, "scale");
    let mut net = NetworkRegistry::default()
        .build_initialized("icnn", ArchitectureSpec { input_dim: 2, width: 5, depth: 2 }, &mut rng)
        .unwrap();
    net.project();
    let closures: Vec<Box<dyn ReducedEntropy>> = vec![
        Box::new(NetworkEntropy::new(net, 0.01)),
        Box::new(NewtonEntropy::new(2, 0.01).unwrap()),
    ];
    for closure in &closures {
        for _ in 0..20 {
            let u0 = rng.random_range(0.1..3.0);
            let u1 = rng.random_range(-0.5..0.5) * u0;
            let u = [u0, u1, u0 * rng.random_range(0.3..0.6)];
            let base = infer(closure.as_ref(), &u).unwrap();
            for c in [0.1, 2.0, 10.0] {
                let scaled: Vec<f64> = u.iter().map(|x| c * x).collect();
                let inf = infer(closure.as_ref(), &scaled).unwrap();
                assert!((inf.g[0] - base.g[0] - f64::ln(c)).abs() < 1e-12);
                for j in 1..3 {
                    assert!((inf.g[j] - base.g[j]).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn inference_rejects_nonpositive_density() {
    let oracle = NewtonEntropy::new(1, 0.0).unwrap();
    assert!(matches!(infer(&oracle, &[0.0, 0.0]), Err(Error::Domain(_))));
    assert!(matches!(infer(&oracle, &[-1.0, 0.0]), Err(Error::Domain(_))));
}

#[test]
fn oracle_has_zero_test_error() {
    for (order, gamma) in [(1, 0.0), (2, 0.01)] {
        let data = generate(&SamplerConfig::for_order(order, gamma, 200, 8)).unwrap();
        let oracle = NewtonEntropy::new(order, gamma).unwrap();
        // samples near the realizable boundary are out of reach of the
        // gamma = 0 Newton solve; evaluate on the solvable ones
        let solvable: Vec<TrainingSample> = data
            .samples
            .iter()
            .filter(|s| oracle.evaluate(s.w()).is_ok())
            .cloned()
            .collect();
        assert!(solvable.len() > 100);
        let e = test_errors(&oracle, &solvable).unwrap();
        assert!(e.e_h <= 1e-12 && e.e_beta <= 1e-12 && e.e_u <= 1e-12, "{e:?}");
    }
}

/// A closure returning the exact labels at a fixed `gamma` but claiming a
/// different one, to show which `psi` the moment error uses.
struct Mislabelled(NewtonEntropy, f64);

impl ReducedEntropy for Mislabelled {
    fn order(&self) -> usize {
        self.0.order()
    }
    fn gamma(&self) -> f64 {
        self.1
    }
    fn evaluate(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.0.evaluate(w)
    }
}

#[test]
fn moment_error_uses_regularized_reconstruction() {
    let gamma = 0.05;
    let data = generate(&SamplerConfig::for_order(1, gamma, 100, 9)).unwrap();
    let exact = NewtonEntropy::new(1, gamma).unwrap();
    assert!(test_errors(&exact, &data.samples).unwrap().e_u < 1e-14);
    // same betas judged through psi^0: error is the mean of gamma^2 |beta|^2
    let wrong = Mislabelled(NewtonEntropy::new(1, gamma).unwrap(), 0.0);
    let e = test_errors(&wrong, &data.samples).unwrap();
    let expected: f64 = data
        .samples
        .iter()
        .map(|s| gamma * gamma * s.beta().iter().map(|b| b * b).sum::<f64>())
        .sum::<f64>()
        / data.len() as f64;
    assert!((e.e_u - expected).abs() < 1e-10 * (1.0 + expected));
}

#[test]
fn combined_error_is_bounded_by_regularization_gap() {
    // oracle at gamma against gamma = 0 reference moments
    let gamma = 1e-3;
    let cfg = SamplerConfig::for_order(1, 0.0, 200, 10);
    let reference = generate(&cfg).unwrap();
    let closure = NewtonEntropy::new(1, gamma).unwrap();
    let m = cfg.norm_bound;
    let n = 1.0;
    let bound = gamma * m + n * (1.0 - (-0.5 * gamma * m * m).exp());
    for s in &reference.samples {
        let (_, beta_p) = closure.evaluate(s.w()).unwrap();
        let psi0 = closure.model().psi(&beta_p, 0.0).unwrap();
        let err = (s.w()[0] - psi0[0]).abs();
        assert!(err <= bound + 1e-9, "{err} > {bound}");
    }
    let e = combined_test_errors(&closure, &reference.samples).unwrap();
    assert!(e.e_u <= bound * bound);
}

#[test]
fn trained_closure_round_trips() {
    let data = generate(&SamplerConfig::for_order(2, 0.01, 40, 11)).unwrap();
    let config = TrainerConfig {
        epochs: 2,
        width: 3,
        ..Default::default()
    };
    let trained = train(&data, &config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    trained.save(&path).unwrap();
    let back = TrainedClosure::load(&path).unwrap();
    assert_eq!(back, trained);
    let w = [0.1, 0.4];
    assert_eq!(
        back.entropy().unwrap().evaluate(&w).unwrap(),
        trained.entropy().unwrap().evaluate(&w).unwrap()
    );

    let mut bad = trained.clone();
    bad.gamma = 0.5;
    bad.save(&path).unwrap();
    assert!(matches!(TrainedClosure::load(&path), Err(Error::Metadata(_))));
}
