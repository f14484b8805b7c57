//! Monomial velocity basis `m(v) = [1, v, ..., v^N]` and the moment algebra
//! built on it.
//!
//! The zeroth basis function is the constant `m_0 = 1`; the remaining `N`
//! entries are the "fruncated" part `m_#`. Normalization divides a moment
//! vector by its zeroth component, fruncation drops it.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::quadrature::QuadratureRule;
use crate::{Error, Result};

/// The constant zeroth basis function.
pub const M0: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    order: usize,
}

impl BasisSpec {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::Config("moment order N must be at least 1".into()));
        }
        Ok(Self { order })
    }

    /// Moment order `N`.
    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of basis functions, `N + 1` in slab geometry.
    pub fn dim(&self) -> usize {
        self.order + 1
    }

    pub fn evaluate(&self, v: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.evaluate_into(v, &mut out);
        out
    }

    pub fn evaluate_into(&self, v: f64, out: &mut [f64]) {
        let mut p = M0;
        for o in out.iter_mut().take(self.dim()) {
            *o = p;
            p *= v;
        }
    }

    /// Exact `<m_k>` over `[-1, 1]`.
    pub fn mean_moments(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|k| if k % 2 == 0 { 2.0 / (k as f64 + 1.0) } else { 0.0 })
            .collect()
    }

    /// Moments of the isotropic density carrying mass `u0`.
    pub fn isotropic(&self, u0: f64) -> MomentVector {
        MomentVector(self.mean_moments().into_iter().map(|m| 0.5 * u0 * m).collect())
    }
}

/// Basis values tabulated at the nodes of a quadrature rule.
#[derive(Debug, Clone)]
pub struct BasisTable {
    spec: BasisSpec,
    rule: QuadratureRule,
    // row-major: values[k * dim + j] = m_j(v_k)
    values: Vec<f64>,
}

impl BasisTable {
    pub fn new(spec: BasisSpec, rule: QuadratureRule) -> Self {
        let dim = spec.dim();
        let mut values = vec![0.0; rule.order() * dim];
        for (k, &v) in rule.nodes().iter().enumerate() {
            spec.evaluate_into(v, &mut values[k * dim..(k + 1) * dim]);
        }
        Self { spec, rule, values }
    }

    pub fn spec(&self) -> BasisSpec {
        self.spec
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn order(&self) -> usize {
        self.spec.order()
    }

    /// `m(v_k)` for node `k`.
    #[inline]
    pub fn at(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.values[k * d..(k + 1) * d]
    }

    /// `m_#(v_k)` for node `k`.
    #[inline]
    pub fn tail_at(&self, k: usize) -> &[f64] {
        &self.at(k)[1..]
    }

    /// `<m f>` from density values at the nodes.
    pub fn moments_of(&self, f_nodes: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (k, (&w, &f)) in self.rule.weights().iter().zip(f_nodes).enumerate() {
            for (o, m) in out.iter_mut().zip(self.at(k)) {
                *o += w * m * f;
            }
        }
        out
    }
}

/// A vector of velocity moments `u = <m f>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentVector(pub Vec<f64>);

impl MomentVector {
    pub fn new(components: Vec<f64>) -> Self {
        Self(components)
    }

    pub fn u0(&self) -> f64 {
        self.0[0]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(self.0.iter().map(|x| c * x).collect())
    }

    pub fn normalize(&self) -> Result<Self> {
        normalize(&self.0).map(Self)
    }

    pub fn fruncate(&self) -> Vec<f64> {
        fruncate(&self.0)
    }
}

impl Deref for MomentVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for MomentVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// `u / u_0`; requires `u_0 > 0`.
pub fn normalize(u: &[f64]) -> Result<Vec<f64>> {
    let u0 = u[0];
    if !(u0 > 0.0) {
        return Err(Error::Domain(format!(
            "normalization requires u_0 > 0, got {u0}"
        )));
    }
    let mut out: Vec<f64> = u.iter().map(|x| x / u0).collect();
    out[0] = 1.0;
    Ok(out)
}

/// Drops the zeroth moment.
pub fn fruncate(u: &[f64]) -> Vec<f64> {
    u[1..].to_vec()
}

/// Applies fruncation `times` times, removing the currently lowest degree
/// each time. In slab geometry every degree block has a single entry.
pub fn fruncate_repeated(u: &[f64], times: usize) -> Vec<f64> {
    u[times.min(u.len())..].to_vec()
}

/// `1 - |u_1|` for a normalized M1 moment; positive iff strictly realizable.
pub fn m1_realizable_gap(u_bar: &[f64]) -> f64 {
    1.0 - u_bar[1].abs()
}
