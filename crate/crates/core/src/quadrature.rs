//! Gauss–Legendre quadrature on the velocity interval `[-1, 1]`.
//!
//! Every angular bracket `<.>` in the crate is evaluated through a
//! [`QuadratureRule`]. Nodes are found by Newton iteration on the Legendre
//! polynomial `P_q` starting from the Tricomi asymptotic guess; only the
//! non-negative half is computed and then mirrored, so the rule is exactly
//! symmetric in floating point (`v_k == -v_{q-1-k}` bitwise).

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default order for solver-grade brackets.
pub const DEFAULT_ORDER: usize = 64;

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Evaluates `(P_q(x), P_q'(x))` with the three-term recurrence.
fn legendre_with_derivative(q: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    for k in 2..=q {
        let kf = k as f64;
        let p_next = ((2.0 * kf - 1.0) * x * p - (kf - 1.0) * p_prev) / kf;
        p_prev = p;
        p = p_next;
    }
    if q == 0 {
        return (1.0, 0.0);
    }
    let dp = q as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

impl QuadratureRule {
    /// Builds the `order`-point Gauss–Legendre rule.
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::Config("quadrature order must be at least 1".into()));
        }
        let q = order;
        let half = q / 2;
        let mut positive = Vec::with_capacity(half);
        let mut positive_w = Vec::with_capacity(half);
        let qf = q as f64;
        // k-th largest root, k = 1..=half
        for k in 1..=half {
            let theta = std::f64::consts::PI * (k as f64 - 0.25) / (qf + 0.5);
            let mut x = (1.0 - (qf - 1.0) / (8.0 * qf * qf * qf)) * theta.cos();
            let mut dp = 0.0;
            for _ in 0..NEWTON_MAX_ITER {
                let (p, d) = legendre_with_derivative(q, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= NEWTON_TOL {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(q, x);
            if d.is_finite() {
                dp = d;
            }
            positive.push(x);
            positive_w.push(2.0 / ((1.0 - x * x) * dp * dp));
        }

        let mut nodes = Vec::with_capacity(q);
        let mut weights = Vec::with_capacity(q);
        for k in 0..half {
            nodes.push(-positive[k]);
            weights.push(positive_w[k]);
        }
        if q % 2 == 1 {
            let (_, d) = legendre_with_derivative(q, 0.0);
            nodes.push(0.0);
            weights.push(2.0 / (d * d));
        }
        for k in (0..half).rev() {
            nodes.push(positive[k]);
            weights.push(positive_w[k]);
        }
        Ok(Self { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Index of the node mirrored through `v = 0`.
    #[inline]
    pub fn mirror(&self, k: usize) -> usize {
        self.nodes.len() - 1 - k
    }

    /// `sum_k w_k f(v_k)`; a non-finite sample is reported as overflow.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64> {
        let mut acc = 0.0;
        for (&v, &w) in self.nodes.iter().zip(&self.weights) {
            let fv = f(v);
            if !fv.is_finite() {
                return Err(Error::Overflow(format!(
                    "integrand is not finite at velocity {v}"
                )));
            }
            acc += w * fv;
        }
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn rejects_order_zero() {
        assert!(QuadratureRule::new(0).is_err());
    }

    #[test]
    fn order_one_is_midpoint() {
        let r = QuadratureRule::new(1).unwrap();
        assert_eq!(r.nodes(), &[0.0]);
        assert_relative_eq!(r.weights()[0], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn small_orders_are_exact() {
        let r2 = QuadratureRule::new(2).unwrap();
        assert_relative_eq!(r2.integrate(|v| v * v).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        let r5 = QuadratureRule::new(5).unwrap();
        assert_relative_eq!(r5.integrate(|v| v.powi(8)).unwrap(), 2.0 / 9.0, epsilon = 1e-14);
    }

    #[test]
    fn basic_integrals() {
        let r = QuadratureRule::new(30).unwrap();
        assert_relative_eq!(r.integrate(|_| 1.0).unwrap(), 2.0, epsilon = 1e-14);
        assert!(r.integrate(|v| v).unwrap().abs() < 1e-15);
        assert_relative_eq!(
            r.integrate(f64::exp).unwrap(),
            2.0 * 1f64.sinh(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn invariants_for_many_orders() {
        for q in [1, 2, 3, 7, 16, 33, 64, 128, 400] {
            let r = QuadratureRule::new(q).unwrap();
            assert_eq!(r.order(), q);
            assert!(r.weights().iter().all(|&w| w > 0.0));
            assert!(r.nodes().windows(2).all(|p| p[0] < p[1]));
            let s: f64 = r.weights().iter().sum();
            assert!((s - 2.0).abs() < 1e-14 * (q as f64).max(1.0), "q={q} sum={s}");
            for k in 0..q {
                assert_eq!(r.nodes()[k], -r.nodes()[r.mirror(k)]);
                assert_eq!(r.weights()[k], r.weights()[r.mirror(k)]);
            }
        }
    }

    #[test]
    fn non_finite_integrand_is_overflow() {
        let r = QuadratureRule::new(4).unwrap();
        assert!(matches!(r.integrate(|v| 1.0 / (v - v)), Err(Error::Overflow(_))));
    }

    #[test]
    fn spectral_refinement_for_exponentials() {
        let exact = 2.0 * (8.0f64).sinh() / 8.0;
        let mut prev = f64::INFINITY;
        for q in [4, 8, 16, 32] {
            let r = QuadratureRule::new(q).unwrap();
            let err = (r.integrate(|v| (8.0 * v).exp()).unwrap() - exact).abs();
            assert!(err < prev || err < 1e-12);
            prev = err;
        }
        assert!(prev / exact < 1e-13);
    }

    proptest! {
        #[test]
        fn exact_for_polynomials(q in 1usize..24, coeffs in prop::collection::vec(-1.0f64..1.0, 48)) {
            let degree = 2 * q - 1;
            let c = &coeffs[..=degree];
            let r = QuadratureRule::new(q).unwrap();
            let approx = r.integrate(|v| c.iter().rev().fold(0.0, |acc, &a| acc * v + a)).unwrap();
            let exact: f64 = c.iter().enumerate()
                .filter(|(k, _)| k % 2 == 0)
                .map(|(k, a)| 2.0 * a / (k as f64 + 1.0))
                .sum();
            let scale: f64 = c.iter().map(|a| a.abs()).sum::<f64>().max(1.0);
            prop_assert!((approx - exact).abs() <= 1e-12 * scale);
        }
    }
}
