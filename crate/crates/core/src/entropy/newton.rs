//! Damped Newton minimization with Armijo backtracking.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSearchConfig {
    pub shrink: f64,
    pub armijo_c: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self {
            shrink: 0.5,
            armijo_c: 1e-4,
            max_backtracks: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewtonConfig {
    pub grad_tol: f64,
    pub max_iter: usize,
    #[serde(default)]
    pub line_search: LineSearchConfig,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iter: 200,
            line_search: LineSearchConfig::default(),
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        let ls = &self.line_search;
        if !(self.grad_tol > 0.0) {
            return Err(Error::Config("grad_tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be positive".into()));
        }
        if !(ls.shrink > 0.0 && ls.shrink < 1.0) || !(ls.armijo_c > 0.0 && ls.armijo_c < 1.0) {
            return Err(Error::Config("line search needs shrink, c in (0, 1)".into()));
        }
        Ok(())
    }
}

/// A twice differentiable, strictly convex objective.
pub trait Objective {
    fn dim(&self) -> usize;

    fn value(&self, x: &DVector<f64>) -> Result<f64>;

    /// Value, gradient and Hessian at `x`.
    fn derivatives(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)>;
}

#[derive(Debug, Clone)]
pub struct NewtonResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Steps where the Hessian factorization failed and the negative gradient
    /// was used instead.
    pub fallback_steps: usize,
}

pub fn newton_minimize<O: Objective + ?Sized>(
    objective: &O,
    start: DVector<f64>,
    config: &NewtonConfig,
) -> Result<NewtonResult> {
    let ls = config.line_search;
    let mut x = start;
    let (mut f, mut g, mut h) = objective.derivatives(&x)?;
    let mut fallback_steps = 0;

    for iteration in 0..config.max_iter {
        let grad_norm = g.norm();
        if grad_norm <= config.grad_tol {
            let mut result = NewtonResult {
                x,
                value: f,
                gradient: g,
                hessian: h,
                iterations: iteration,
                grad_norm,
                fallback_steps,
            };
            polish(objective, &mut result);
            return Ok(result);
        }

        let mut direction = match h.clone().cholesky() {
            Some(chol) => chol.solve(&(-&g)),
            None => {
                fallback_steps += 1;
                -&g
            }
        };
        let mut slope = g.dot(&direction);
        if !(slope < 0.0) || !direction.iter().all(|d| d.is_finite()) {
            fallback_steps += 1;
            direction = -&g;
            slope = -grad_norm * grad_norm;
        }

        // Inside the quadratic region the predicted decrease is below the
        // rounding level of f, so Armijo cannot discriminate: take the step.
        let negligible = -slope <= 1e-13 * (1.0 + f.abs());

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=ls.max_backtracks {
            let trial = &x + step * &direction;
            if negligible {
                accepted = Some(trial);
                break;
            }
            if let Ok(ft) = objective.value(&trial) {
                if ft.is_finite() && ft <= f + ls.armijo_c * step * slope {
                    accepted = Some(trial);
                    break;
                }
            }
            step *= ls.shrink;
        }
        let Some(next) = accepted else {
            return Err(Error::LineSearch {
                iteration,
                grad_norm,
            });
        };
        x = next;
        (f, g, h) = objective.derivatives(&x)?;
    }

    let grad_norm = g.norm();
    if grad_norm <= config.grad_tol {
        return Ok(NewtonResult {
            x,
            value: f,
            gradient: g,
            hessian: h,
            iterations: config.max_iter,
            grad_norm,
            fallback_steps,
        });
    }
    Err(Error::NonConvergence {
        iterations: config.max_iter,
        grad_norm,
        last_iterate: x.iter().copied().collect(),
    })
}

/// One undamped Newton step from a converged iterate, kept only if it lowers
/// the gradient norm. Cheap, and pushes the residual well below `grad_tol`.
fn polish<O: Objective + ?Sized>(objective: &O, r: &mut NewtonResult) {
    if r.grad_norm <= 1e-14 {
        return;
    }
    let Some(chol) = r.hessian.clone().cholesky() else {
        return;
    };
    let trial = &r.x + chol.solve(&(-&r.gradient));
    if let Ok((f, g, h)) = objective.derivatives(&trial) {
        let norm = g.norm();
        if f.is_finite() && norm < r.grad_norm {
            r.x = trial;
            r.value = f;
            r.gradient = g;
            r.hessian = h;
            r.grad_norm = norm;
        }
    }
}

/// Spectral condition number of a symmetric matrix.
pub fn condition_number(h: &DMatrix<f64>) -> f64 {
    let eig = h.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eigen_extremes(h: &DMatrix<f64>) -> (f64, f64) {
    let eig = h.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    (min, max)
}
