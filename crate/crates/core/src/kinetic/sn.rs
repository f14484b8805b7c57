use rayon::prelude::*;

use super::{Boundary, GridState, InitialDensity, MaterialField, Mesh1D};
use crate::basis::{BasisSpec, BasisTable};
use crate::quadrature::QuadratureRule;
use crate::{Error, Result};

/// Discrete-ordinates solver: per-ordinate upwind transport coupled through
/// isotropic scattering. Its [`GridState`] holds nodal values per cell.
pub struct SnSolver<'a> {
    pub mesh: &'a Mesh1D,
    pub materials: &'a MaterialField,
    rule: QuadratureRule,
}

impl<'a> SnSolver<'a> {
    pub fn new(mesh: &'a Mesh1D, materials: &'a MaterialField, ordinates: usize) -> Result<Self> {
        if ordinates < 4 {
            return Err(Error::Config(format!("S_N needs at least 4 ordinates, got {ordinates}")));
        }
        materials.validate(mesh.cells)?;
        Ok(Self {
            mesh,
            materials,
            rule: QuadratureRule::new(ordinates)?,
        })
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn project(&self, f0: &InitialDensity) -> GridState {
        let u = (0..self.mesh.cells)
            .map(|i| {
                let x = self.mesh.center(i);
                self.rule.nodes().iter().map(|&v| f0(x, v)).collect()
            })
            .collect();
        GridState::new(u)
    }

    fn ghost(&self, boundary: &Boundary, inner: &[f64]) -> Vec<f64> {
        match boundary {
            Boundary::Reflective => (0..self.rule.order()).map(|k| inner[self.rule.mirror(k)]).collect(),
            Boundary::Dirichlet(f) => self.rule.nodes().iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn rhs(&self, f: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.mesh.cells;
        let left = self.ghost(&self.mesh.left, &f[0]);
        let right = self.ghost(&self.mesh.right, &f[n - 1]);
        let dx = self.mesh.dx();
        let nodes = self.rule.nodes();
        let weights = self.rule.weights();
        (0..n)
            .into_par_iter()
            .map(|i| {
                let prev = if i == 0 { &left } else { &f[i - 1] };
                let next = if i == n - 1 { &right } else { &f[i + 1] };
                let c = &f[i];
                let phi: f64 = weights.iter().zip(c).map(|(w, f)| w * f).sum();
                let (ss, sa, q) = (self.materials.sigma_s[i], self.materials.sigma_a[i], self.materials.source[i]);
                nodes
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| {
                        let transport = if v > 0.0 {
                            v * (c[k] - prev[k])
                        } else {
                            v * (next[k] - c[k])
                        };
                        -transport / dx + ss * (0.5 * phi - c[k]) - sa * c[k] + 0.5 * q
                    })
                    .collect()
            })
            .collect()
    }

    pub fn step_heun(&self, state: &GridState, dt: f64) -> Result<GridState> {
        let k1 = self.rhs(&state.u);
        let stage: Vec<Vec<f64>> = axpy(&state.u, &k1, dt);
        let k2 = self.rhs(&stage);
        let next: Vec<Vec<f64>> = state
            .u
            .iter()
            .zip(k1.iter().zip(&k2))
            .map(|(u, (a, b))| u.iter().zip(a.iter().zip(b)).map(|(u, (a, b))| u + 0.5 * dt * (a + b)).collect())
            .collect();
        for (i, f) in next.iter().enumerate() {
            if f.iter().any(|x| !x.is_finite()) {
                return Err(Error::Domain("non-finite S_N values".into()).in_cell(i, state.time + dt));
            }
        }
        Ok(GridState {
            u: next,
            time: state.time + dt,
            step: state.step + 1,
            floor_events: 0,
        })
    }

    /// Moments up to `order` per cell.
    pub fn moments(&self, state: &GridState, order: usize) -> Result<Vec<Vec<f64>>> {
        let table = BasisTable::new(BasisSpec::new(order)?, self.rule.clone());
        Ok(state.u.iter().map(|f| table.moments_of(f)).collect())
    }

    /// `sum_i <f_i> dx`.
    pub fn mass(&self, state: &GridState) -> f64 {
        let w = self.rule.weights();
        state
            .u
            .iter()
            .map(|f| w.iter().zip(f).map(|(w, f)| w * f).sum::<f64>())
            .sum::<f64>()
            * self.mesh.dx()
    }
}

fn axpy(u: &[Vec<f64>], k: &[Vec<f64>], dt: f64) -> Vec<Vec<f64>> {
    u.iter()
        .zip(k)
        .map(|(u, k)| u.iter().zip(k).map(|(u, k)| u + dt * k).collect())
        .collect()
}
