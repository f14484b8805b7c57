//! Entropy-based closure mathematics with the Maxwell–Boltzmann entropy
//! `eta(f) = f log f - f`, `eta_* = eta'_* = exp`.
//!
//! Three dual problems are provided:
//!
//! - the standard closure (`gamma = 0`) and the partially regularized closure
//!   `phi^gamma(alpha; u) = <exp(alpha.m)> - alpha.u + (u_0 gamma / 2) |alpha_#|^2`,
//!   solved through the reduced problem in `beta = alpha_#` on normalized
//!   moments and lifted back with [`EntropyModel::lift_multiplier`];
//! - the fully regularized closure with penalty `(Gamma / 2) |alpha|^2`,
//!   solved directly in `R^{N+1}`.
//!
//! All brackets use the quadrature rule of the model's [`BasisTable`].
//! Exponents are shifted before exponentiation; the overflow guard checks the
//! unshifted full exponent `alpha.m(v_k)` against [`OVERFLOW_LIMIT`].

mod newton;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use newton::{
    condition_number, eigen_extremes, newton_minimize, LineSearchConfig, NewtonConfig,
    NewtonResult, Objective,
};

use crate::basis::{normalize, BasisSpec, BasisTable, M0};
use crate::quadrature::{QuadratureRule, DEFAULT_ORDER};
use crate::{Error, Result};

/// Largest admissible exponent `alpha.m(v)` at a quadrature node.
pub const OVERFLOW_LIMIT: f64 = 70.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegularizationMode {
    Standard,
    FullyRegularized { big_gamma: f64 },
    PartiallyRegularized { gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClosureConfig {
    pub order: usize,
    pub mode: RegularizationMode,
    pub quad_order: usize,
    #[serde(default)]
    pub newton: NewtonConfig,
}

impl ClosureConfig {
    pub fn partially_regularized(order: usize, gamma: f64) -> Self {
        let mode = if gamma == 0.0 {
            RegularizationMode::Standard
        } else {
            RegularizationMode::PartiallyRegularized { gamma }
        };
        Self {
            order,
            mode,
            quad_order: DEFAULT_ORDER,
            newton: NewtonConfig::default(),
        }
    }

    /// Regularization weight of the partially regularized problem
    /// (zero for the standard and the fully regularized modes).
    pub fn gamma(&self) -> f64 {
        match self.mode {
            RegularizationMode::PartiallyRegularized { gamma } => gamma,
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::Config("moment order N must be at least 1".into()));
        }
        if self.quad_order < self.order + 1 {
            return Err(Error::Config(format!(
                "quad_order {} must be at least N + 1 = {}",
                self.quad_order,
                self.order + 1
            )));
        }
        match self.mode {
            RegularizationMode::PartiallyRegularized { gamma } if !(gamma >= 0.0) => {
                return Err(Error::Config(format!("gamma must be >= 0, got {gamma}")))
            }
            RegularizationMode::FullyRegularized { big_gamma } if !(big_gamma >= 0.0) => {
                return Err(Error::Config(format!("Gamma must be >= 0, got {big_gamma}")))
            }
            _ => {}
        }
        self.newton.validate()
    }
}

/// Result of the reduced (normalized, fruncated) solve.
#[derive(Debug, Clone)]
pub struct ReducedSolution {
    pub beta: Vec<f64>,
    /// Reduced entropy `h-hat^gamma(w) = -phi-hat^gamma(beta*; w)`.
    pub h_hat: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub hessian_cond: f64,
    pub fallback_steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosureSolution {
    pub beta: Vec<f64>,
    /// Lifted full multiplier `alpha_u^gamma`.
    pub alpha: Vec<f64>,
    /// Entropy gradient `g_u^gamma`.
    pub g: Vec<f64>,
    /// Entropy value `h^gamma(u)`.
    pub h: f64,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub hessian_cond: f64,
}

/// Shifted log-partition data of `exp(beta.m_#)` at the quadrature nodes.
struct LogPartition {
    /// `log <exp(beta.m_#)>`
    log_z: f64,
    /// `<m_# exp(beta.m_#)> / <exp(beta.m_#)>`
    mean: Vec<f64>,
    /// Normalized density `exp(vartheta + beta.m_#)` at the nodes.
    density: Vec<f64>,
}

/// `g = alpha - (gamma / 2) [|alpha_#|^2, 0]`.
pub fn entropy_gradient(alpha: &[f64], gamma: f64) -> Vec<f64> {
    let mut g = alpha.to_vec();
    let tail_sq: f64 = alpha[1..].iter().map(|a| a * a).sum();
    g[0] -= 0.5 * gamma * tail_sq;
    g
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Closure evaluator for one moment order and quadrature rule.
#[derive(Debug, Clone)]
pub struct EntropyModel {
    config: ClosureConfig,
    table: BasisTable,
}

impl EntropyModel {
    pub fn new(config: ClosureConfig) -> Result<Self> {
        config.validate()?;
        let spec = BasisSpec::new(config.order)?;
        let rule = QuadratureRule::new(config.quad_order)?;
        Ok(Self {
            config,
            table: BasisTable::new(spec, rule),
        })
    }

    pub fn config(&self) -> &ClosureConfig {
        &self.config
    }

    pub fn table(&self) -> &BasisTable {
        &self.table
    }

    pub fn order(&self) -> usize {
        self.config.order
    }

    pub fn gamma(&self) -> f64 {
        self.config.gamma()
    }

    fn check_len(&self, what: &str, v: &[f64], len: usize) -> Result<()> {
        if v.len() != len {
            return Err(Error::Domain(format!(
                "{what} has length {}, expected {len}",
                v.len()
            )));
        }
        Ok(())
    }

    fn log_partition(&self, beta: &[f64]) -> Result<LogPartition> {
        let n = self.order();
        self.check_len("beta", beta, n)?;
        let q = self.table.rule().order();
        let weights = self.table.rule().weights();
        let mut s = Vec::with_capacity(q);
        let mut smax = f64::NEG_INFINITY;
        for k in 0..q {
            let sk = dot(beta, self.table.tail_at(k));
            if !sk.is_finite() {
                return Err(Error::Overflow(format!("exponent beta.m is not finite: {sk}")));
            }
            smax = smax.max(sk);
            s.push(sk);
        }
        let mut z = 0.0;
        let mut mean = vec![0.0; n];
        for k in 0..q {
            let e = (s[k] - smax).exp();
            s[k] = e;
            let we = weights[k] * e;
            z += we;
            for (m, x) in mean.iter_mut().zip(self.table.tail_at(k)) {
                *m += we * x;
            }
        }
        let log_z = smax + z.ln();
        // exponent of the normalized full multiplier: vartheta + beta.m_# <= -ln(z)
        let peak = -z.ln();
        if peak > OVERFLOW_LIMIT {
            return Err(Error::Overflow(format!(
                "exponent alpha.m reaches {peak:.2} > {OVERFLOW_LIMIT}"
            )));
        }
        for m in mean.iter_mut() {
            *m /= z;
        }
        let inv_z = 1.0 / z;
        let density = s.into_iter().map(|e| e * inv_z).collect();
        Ok(LogPartition {
            log_z,
            mean,
            density,
        })
    }

    /// `vartheta(beta) = -(1/m_0)(log m_0 + log <exp(beta.m_#)>)`.
    pub fn vartheta(&self, beta: &[f64]) -> Result<f64> {
        let lp = self.log_partition(beta)?;
        Ok(-(M0.ln() + lp.log_z) / M0)
    }

    /// Reduced dual objective `phi-hat^gamma(beta; w)`.
    pub fn dual_objective_reduced(&self, beta: &[f64], w: &[f64], gamma: f64) -> Result<f64> {
        self.check_len("w", w, self.order())?;
        let lp = self.log_partition(beta)?;
        Ok(reduced_value(&lp, beta, w, gamma))
    }

    /// `<m_# e> / <e> - w + gamma beta`.
    pub fn reduced_gradient(&self, beta: &[f64], w: &[f64], gamma: f64) -> Result<Vec<f64>> {
        self.check_len("w", w, self.order())?;
        let lp = self.log_partition(beta)?;
        Ok(lp
            .mean
            .iter()
            .zip(w)
            .zip(beta)
            .map(|((m, wi), b)| m - wi + gamma * b)
            .collect())
    }

    /// Covariance of `m_#` under the normalized density, plus `gamma I`.
    pub fn reduced_hessian(&self, beta: &[f64], gamma: f64) -> Result<DMatrix<f64>> {
        let lp = self.log_partition(beta)?;
        Ok(self.covariance(&lp, gamma))
    }

    fn covariance(&self, lp: &LogPartition, gamma: f64) -> DMatrix<f64> {
        let n = self.order();
        let weights = self.table.rule().weights();
        let mut h = DMatrix::zeros(n, n);
        let mut centered = vec![0.0; n];
        for (k, (&w, &d)) in weights.iter().zip(&lp.density).enumerate() {
            let wd = w * d;
            for (c, (x, m)) in centered.iter_mut().zip(self.table.tail_at(k).iter().zip(&lp.mean)) {
                *c = x - m;
            }
            for i in 0..n {
                for j in 0..=i {
                    h[(i, j)] += wd * centered[i] * centered[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                h[(j, i)] = h[(i, j)];
            }
            h[(i, i)] += gamma;
        }
        h
    }

    /// Moment reconstruction `psi^gamma(beta) = <m_# exp([vartheta, beta].m)> + gamma beta`.
    pub fn psi(&self, beta: &[f64], gamma: f64) -> Result<Vec<f64>> {
        let lp = self.log_partition(beta)?;
        Ok(lp.mean.iter().zip(beta).map(|(m, b)| m + gamma * b).collect())
    }

    /// `psi^gamma(beta)` together with its Jacobian `H-hat^gamma(beta)`.
    pub fn psi_with_jacobian(&self, beta: &[f64], gamma: f64) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let lp = self.log_partition(beta)?;
        let psi = lp.mean.iter().zip(beta).map(|(m, b)| m + gamma * b).collect();
        Ok((psi, self.covariance(&lp, gamma)))
    }

    /// `alpha = [vartheta(beta) + log(u0)/m_0, beta]`.
    pub fn lift_multiplier(&self, beta: &[f64], u0: f64) -> Result<Vec<f64>> {
        if !(u0 > 0.0) {
            return Err(Error::Domain(format!("lifting requires u_0 > 0, got {u0}")));
        }
        let mut alpha = Vec::with_capacity(beta.len() + 1);
        alpha.push(self.vartheta(beta)? + u0.ln() / M0);
        alpha.extend_from_slice(beta);
        Ok(alpha)
    }

    fn full_exponents(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        self.check_len("alpha", alpha, self.table.dim())?;
        let q = self.table.rule().order();
        let mut s = Vec::with_capacity(q);
        for k in 0..q {
            let sk = dot(alpha, self.table.at(k));
            if !(sk <= OVERFLOW_LIMIT) {
                return Err(Error::Overflow(format!(
                    "exponent alpha.m = {sk:.3} exceeds {OVERFLOW_LIMIT} at v = {}",
                    self.table.rule().nodes()[k]
                )));
            }
            s.push(sk);
        }
        Ok(s)
    }

    /// Partially regularized dual objective `phi^gamma(alpha; u)`.
    pub fn dual_objective_full(&self, alpha: &[f64], u: &[f64], gamma: f64) -> Result<f64> {
        self.check_len("u", u, self.table.dim())?;
        let s = self.full_exponents(alpha)?;
        let e: f64 = s
            .iter()
            .zip(self.table.rule().weights())
            .map(|(x, w)| w * x.exp())
            .sum();
        let tail_sq: f64 = alpha[1..].iter().map(|a| a * a).sum();
        Ok(e - dot(alpha, u) + 0.5 * u[0] * gamma * tail_sq)
    }

    /// Gradient of `phi^gamma` with respect to the full multiplier.
    pub fn dual_gradient_full(&self, alpha: &[f64], u: &[f64], gamma: f64) -> Result<Vec<f64>> {
        self.check_len("u", u, self.table.dim())?;
        let s = self.full_exponents(alpha)?;
        let f: Vec<f64> = s.iter().map(|x| x.exp()).collect();
        let mut g = self.table.moments_of(&f);
        for j in 0..g.len() {
            g[j] -= u[j];
            if j > 0 {
                g[j] += u[0] * gamma * alpha[j];
            }
        }
        Ok(g)
    }

    /// Hessian `<m m^T exp(alpha.m)>` of the unregularized dual.
    pub fn dual_hessian_full(&self, alpha: &[f64]) -> Result<DMatrix<f64>> {
        let s = self.full_exponents(alpha)?;
        let d = self.table.dim();
        let mut h = DMatrix::zeros(d, d);
        for (k, (x, w)) in s.iter().zip(self.table.rule().weights()).enumerate() {
            let we = w * x.exp();
            let m = self.table.at(k);
            for i in 0..d {
                for j in 0..d {
                    h[(i, j)] += we * m[i] * m[j];
                }
            }
        }
        Ok(h)
    }

    /// Minimizes the reduced objective for normalized fruncated moments `w`.
    pub fn solve_reduced(&self, w: &[f64], gamma: f64) -> Result<ReducedSolution> {
        self.check_len("w", w, self.order())?;
        let objective = ReducedObjective {
            model: self,
            w,
            gamma,
        };
        let r = newton_minimize(&objective, DVector::zeros(self.order()), &self.config.newton)?;
        Ok(ReducedSolution {
            beta: r.x.iter().copied().collect(),
            h_hat: -r.value,
            iterations: r.iterations,
            grad_norm: r.grad_norm,
            hessian_cond: condition_number(&r.hessian),
            fallback_steps: r.fallback_steps,
        })
    }

    /// Full closure of `u` (requires `u_0 > 0`) at the configured `gamma`.
    pub fn solve(&self, u: &[f64]) -> Result<ClosureSolution> {
        self.solve_with_gamma(u, self.gamma())
    }

    pub fn solve_with_gamma(&self, u: &[f64], gamma: f64) -> Result<ClosureSolution> {
        self.check_len("u", u, self.table.dim())?;
        let u_bar = normalize(u)?;
        let reduced = self.solve_reduced(&u_bar[1..], gamma)?;
        let u0 = u[0];
        let alpha = self.lift_multiplier(&reduced.beta, u0)?;
        let g = entropy_gradient(&alpha, gamma);
        let h = self.entropy_extension(u0, reduced.h_hat);
        Ok(ClosureSolution {
            beta: reduced.beta,
            alpha,
            g,
            h,
            iterations: reduced.iterations,
            final_grad_norm: reduced.grad_norm,
            hessian_cond: reduced.hessian_cond,
        })
    }

    /// Reduced entropy `h-hat^gamma(w)` and its gradient `beta*_w`.
    pub fn reduced_entropy(&self, w: &[f64], gamma: f64) -> Result<(f64, Vec<f64>)> {
        let r = self.solve_reduced(w, gamma)?;
        Ok((r.h_hat, r.beta))
    }

    /// `h^gamma(u) = -phi^gamma(alpha; u)` (strong duality).
    pub fn entropy_value(&self, u: &[f64], solution: &ClosureSolution, gamma: f64) -> Result<f64> {
        Ok(-self.dual_objective_full(&solution.alpha, u, gamma)?)
    }

    /// `h^gamma(u) = u_0 h-hat^gamma(u-bar_#) + (u_0/m_0) log u_0`.
    pub fn entropy_extension(&self, u0: f64, h_hat: f64) -> f64 {
        u0 * h_hat + u0 / M0 * u0.ln()
    }

    /// Primal objective evaluated at the primal minimizer
    /// `f~ = exp(alpha.m)`: `<eta(f~)> + |<m_# f~> - u_#|^2 / (2 u_0 gamma)`.
    pub fn entropy_primal(&self, u: &[f64], alpha: &[f64], gamma: f64) -> Result<f64> {
        let s = self.full_exponents(alpha)?;
        let f: Vec<f64> = s.iter().map(|x| x.exp()).collect();
        let eta: f64 = s
            .iter()
            .zip(&f)
            .zip(self.table.rule().weights())
            .map(|((x, fx), w)| w * (fx * x - fx))
            .sum();
        if gamma == 0.0 {
            return Ok(eta);
        }
        let m = self.table.moments_of(&f);
        let mismatch: f64 = m[1..].iter().zip(&u[1..]).map(|(a, b)| (a - b).powi(2)).sum();
        Ok(eta + mismatch / (2.0 * u[0] * gamma))
    }

    /// Ansatz density `exp(g.m)` at the quadrature nodes.
    pub fn density_at_nodes(&self, g: &[f64]) -> Result<Vec<f64>> {
        Ok(self.full_exponents(g)?.into_iter().map(f64::exp).collect())
    }

    /// Ansatz density `v -> exp(g.m(v))`.
    pub fn reconstruct_density(&self, g: &[f64]) -> impl Fn(f64) -> f64 + '_ {
        let g = g.to_vec();
        let spec = self.table.spec();
        move |v| {
            let m = spec.evaluate(v);
            dot(&g, &m).exp()
        }
    }

    /// `<m exp(g.m)>`.
    pub fn moments_of_ansatz(&self, g: &[f64]) -> Result<Vec<f64>> {
        let f = self.density_at_nodes(g)?;
        Ok(self.table.moments_of(&f))
    }

    /// Minimizer of `<exp(alpha.m)> - alpha.u + (Gamma/2)|alpha|^2`.
    pub fn solve_fully_regularized(&self, u: &[f64], big_gamma: f64) -> Result<NewtonResult> {
        self.check_len("u", u, self.table.dim())?;
        if !(big_gamma >= 0.0) {
            return Err(Error::Domain(format!("Gamma must be >= 0, got {big_gamma}")));
        }
        let objective = FullyRegularizedObjective {
            model: self,
            u,
            big_gamma,
        };
        newton_minimize(&objective, DVector::zeros(self.table.dim()), &self.config.newton)
    }

    /// Value of the fully regularized dual objective.
    pub fn dual_objective_fully_regularized(
        &self,
        alpha: &[f64],
        u: &[f64],
        big_gamma: f64,
    ) -> Result<f64> {
        FullyRegularizedObjective {
            model: self,
            u,
            big_gamma,
        }
        .value(&DVector::from_column_slice(alpha))
    }
}

fn reduced_value(lp: &LogPartition, beta: &[f64], w: &[f64], gamma: f64) -> f64 {
    let beta_sq: f64 = beta.iter().map(|b| b * b).sum();
    1.0 / M0 + (M0.ln() + lp.log_z) / M0 - dot(beta, w) + 0.5 * gamma * beta_sq
}

struct ReducedObjective<'a> {
    model: &'a EntropyModel,
    w: &'a [f64],
    gamma: f64,
}

impl Objective for ReducedObjective<'_> {
    fn dim(&self) -> usize {
        self.w.len()
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        self.model.dual_objective_reduced(x.as_slice(), self.w, self.gamma)
    }

    fn derivatives(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let beta = x.as_slice();
        let lp = self.model.log_partition(beta)?;
        let value = reduced_value(&lp, beta, self.w, self.gamma);
        let grad = DVector::from_iterator(
            beta.len(),
            lp.mean
                .iter()
                .zip(self.w)
                .zip(beta)
                .map(|((m, wi), b)| m - wi + self.gamma * b),
        );
        let hess = self.model.covariance(&lp, self.gamma);
        Ok((value, grad, hess))
    }
}

struct FullyRegularizedObjective<'a> {
    model: &'a EntropyModel,
    u: &'a [f64],
    big_gamma: f64,
}

impl Objective for FullyRegularizedObjective<'_> {
    fn dim(&self) -> usize {
        self.u.len()
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        let alpha = x.as_slice();
        let s = self.model.full_exponents(alpha)?;
        let e: f64 = s
            .iter()
            .zip(self.model.table.rule().weights())
            .map(|(x, w)| w * x.exp())
            .sum();
        Ok(e - dot(alpha, self.u) + 0.5 * self.big_gamma * dot(alpha, alpha))
    }

    fn derivatives(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let alpha = x.as_slice();
        let value = self.value(x)?;
        let mut grad = DVector::from_vec(self.model.dual_gradient_full(alpha, self.u, 0.0)?);
        grad += self.big_gamma * x;
        let mut hess = self.model.dual_hessian_full(alpha)?;
        for i in 0..hess.nrows() {
            hess[(i, i)] += self.big_gamma;
        }
        Ok((value, grad, hess))
    }
}

#[cfg(test)]
mod tests;
