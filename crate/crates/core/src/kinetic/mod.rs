//! First-order finite-volume solver for the slab-geometry moment system
//!
//! `d_t u + d_x <v m f_u> = sigma_s ((u_0 / 2) <m> - u) - sigma_a u + (q / 2) <m>`
//!
//! with a kinetic upwind flux, explicit Heun time stepping and pluggable
//! closures, plus a discrete-ordinates reference solver.

mod cases;
mod closure;
mod run;
mod sn;

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::basis::BasisTable;
use crate::{Error, Result};

pub use cases::{CaseKind, CaseOverrides, CaseSetup, InitialDensity};
pub use closure::{
    Closure, ClosureRegistry, ClosureRequest, NetworkClosure, NewtonClosure, PnClosure,
};
pub use run::{
    e_rel, run_moments, run_sn, Diagnostics, RunOptions, RunResult, Snapshot,
};
pub use sn::SnSolver;

/// Lower bound on `u_0` for entropy closures.
pub const DEFAULT_U0_FLOOR: f64 = 1e-10;

/// Inflow density as a function of velocity.
pub type BoundaryDensity = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Boundary {
    /// Prescribed ghost density.
    Dirichlet(BoundaryDensity),
    /// Specular reflection `f(-v) = f(v)`.
    Reflective,
}

impl Boundary {
    pub fn constant(value: f64) -> Self {
        Boundary::Dirichlet(Arc::new(move |_| value))
    }
}

impl fmt::Debug for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Boundary::Dirichlet(_) => f.write_str("Dirichlet"),
            Boundary::Reflective => f.write_str("Reflective"),
        }
    }
}

/// Uniform grid on `[x_lo, x_hi]`.
#[derive(Debug, Clone)]
pub struct Mesh1D {
    pub x_lo: f64,
    pub x_hi: f64,
    pub cells: usize,
    pub left: Boundary,
    pub right: Boundary,
}

impl Mesh1D {
    pub fn new(x_lo: f64, x_hi: f64, cells: usize, left: Boundary, right: Boundary) -> Result<Self> {
        if !(x_hi > x_lo) || !x_lo.is_finite() || !x_hi.is_finite() {
            return Err(Error::Config(format!("bad domain [{x_lo}, {x_hi}]")));
        }
        if cells < 2 {
            return Err(Error::Config("mesh needs at least two cells".into()));
        }
        Ok(Self {
            x_lo,
            x_hi,
            cells,
            left,
            right,
        })
    }

    /// Mesh with cell width as close to `dx` as an integer count allows.
    pub fn with_spacing(x_lo: f64, x_hi: f64, dx: f64, left: Boundary, right: Boundary) -> Result<Self> {
        if !(dx > 0.0) {
            return Err(Error::Config(format!("dx must be positive, got {dx}")));
        }
        let cells = ((x_hi - x_lo) / dx).round().max(2.0) as usize;
        Self::new(x_lo, x_hi, cells, left, right)
    }

    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / self.cells as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.x_lo + (i as f64 + 0.5) * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.cells).map(|i| self.center(i)).collect()
    }
}

/// Cellwise scattering, absorption and isotropic source rates.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialField {
    pub sigma_s: Vec<f64>,
    pub sigma_a: Vec<f64>,
    pub source: Vec<f64>,
}

impl MaterialField {
    pub fn uniform(cells: usize, sigma_s: f64, sigma_a: f64, source: f64) -> Self {
        Self {
            sigma_s: vec![sigma_s; cells],
            sigma_a: vec![sigma_a; cells],
            source: vec![source; cells],
        }
    }

    pub fn validate(&self, cells: usize) -> Result<()> {
        for (name, v) in [("sigma_s", &self.sigma_s), ("sigma_a", &self.sigma_a), ("source", &self.source)] {
            if v.len() != cells {
                return Err(Error::Config(format!("{name} has {} entries for {cells} cells", v.len())));
            }
            if let Some(x) = v.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {x}")));
            }
        }
        Ok(())
    }
}

/// Moment state on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    pub u: Vec<Vec<f64>>,
    pub time: f64,
    pub step: usize,
    /// Cumulative number of `u_0` floor resets.
    pub floor_events: usize,
}

impl GridState {
    pub fn new(u: Vec<Vec<f64>>) -> Self {
        Self {
            u,
            time: 0.0,
            step: 0,
            floor_events: 0,
        }
    }

    /// `sum_i u_0,i dx`.
    pub fn mass(&self, dx: f64) -> f64 {
        self.u.iter().map(|u| u[0]).sum::<f64>() * dx
    }

    pub fn densities(&self) -> Vec<f64> {
        self.u.iter().map(|u| u[0]).collect()
    }
}

/// Face reconstruction of the nodal densities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reconstruction {
    /// Piecewise constant.
    #[default]
    FirstOrder,
    /// Minmod-limited linear.
    Minmod,
}

/// Kinetic upwind flux `<m v [f_i H(v n) + f_j (1 - H(v n))]> n` from nodal
/// densities on the left (`f_i`) and right (`f_j`) of a face with normal `n`.
pub fn upwind_flux(table: &BasisTable, f_i: &[f64], f_j: &[f64], n: f64) -> Vec<f64> {
    let rule = table.rule();
    let mut out = vec![0.0; table.dim()];
    for (k, (&v, &w)) in rule.nodes().iter().zip(rule.weights()).enumerate() {
        let vn = v * n;
        let f = if vn > 0.0 {
            f_i[k]
        } else if vn < 0.0 {
            f_j[k]
        } else {
            continue;
        };
        let c = w * vn * f;
        for (o, m) in out.iter_mut().zip(table.at(k)) {
            *o += c * m;
        }
    }
    out
}

/// [`upwind_flux`] with both states closed by `closure`.
pub fn upwind_flux_moments(closure: &dyn Closure, u_i: &[f64], u_j: &[f64], n: f64) -> Result<Vec<f64>> {
    let f_i = closure.density_at_nodes(u_i)?;
    let f_j = closure.density_at_nodes(u_j)?;
    Ok(upwind_flux(closure.table(), &f_i, &f_j, n))
}

/// Isotropic scattering `sigma_s ((u_0 / 2) <m> - u)`.
pub fn collision_moments(u: &[f64], mean_moments: &[f64], sigma_s: f64) -> Vec<f64> {
    u.iter()
        .zip(mean_moments)
        .map(|(ui, m)| sigma_s * (0.5 * u[0] * m - ui))
        .collect()
}

fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

/// Moment solver for one mesh, material field and closure.
pub struct MomentSolver<'a> {
    pub mesh: &'a Mesh1D,
    pub materials: &'a MaterialField,
    pub closure: &'a dyn Closure,
    pub reconstruction: Reconstruction,
    pub u0_floor: f64,
    mean: Vec<f64>,
}

impl<'a> MomentSolver<'a> {
    pub fn new(mesh: &'a Mesh1D, materials: &'a MaterialField, closure: &'a dyn Closure) -> Result<Self> {
        materials.validate(mesh.cells)?;
        Ok(Self {
            mesh,
            materials,
            closure,
            reconstruction: Reconstruction::FirstOrder,
            u0_floor: DEFAULT_U0_FLOOR,
            mean: closure.table().spec().mean_moments(),
        })
    }

    /// Initial moments `<m f0(x_i, .)>` at the cell centers.
    pub fn project(&self, f0: &InitialDensity) -> GridState {
        let table = self.closure.table();
        let nodes = table.rule().nodes();
        let u = (0..self.mesh.cells)
            .map(|i| {
                let x = self.mesh.center(i);
                let f: Vec<f64> = nodes.iter().map(|&v| f0(x, v)).collect();
                table.moments_of(&f)
            })
            .collect();
        GridState::new(u)
    }

    fn ghost(&self, boundary: &Boundary, inner: &[f64]) -> Vec<f64> {
        let rule = self.closure.table().rule();
        match boundary {
            Boundary::Reflective => (0..rule.order()).map(|k| inner[rule.mirror(k)]).collect(),
            Boundary::Dirichlet(f) => rule.nodes().iter().map(|&v| f(v)).collect(),
        }
    }

    /// Semi-discrete right-hand side.
    pub fn rhs(&self, u: &[Vec<f64>], time: f64) -> Result<Vec<Vec<f64>>> {
        let n = self.mesh.cells;
        let closure = self.closure;
        let dens: Vec<Result<Vec<f64>>> = u
            .par_iter()
            .enumerate()
            .map(|(i, u)| closure.density_at_nodes(u).map_err(|e| e.in_cell(i, time)))
            .collect();
        let dens = dens.into_iter().collect::<Result<Vec<_>>>()?;
        let left_ghost = self.ghost(&self.mesh.left, &dens[0]);
        let right_ghost = self.ghost(&self.mesh.right, &dens[n - 1]);

        // face states: (left of face j, right of face j), j = 0..=n
        let (lo, hi): (Vec<Vec<f64>>, Vec<Vec<f64>>) = match self.reconstruction {
            Reconstruction::FirstOrder => (dens.clone(), dens.clone()),
            Reconstruction::Minmod => (0..n)
                .into_par_iter()
                .map(|i| {
                    let prev = if i == 0 { &left_ghost } else { &dens[i - 1] };
                    let next = if i == n - 1 { &right_ghost } else { &dens[i + 1] };
                    let c = &dens[i];
                    let s: Vec<f64> = (0..c.len()).map(|k| minmod(next[k] - c[k], c[k] - prev[k])).collect();
                    let l = c.iter().zip(&s).map(|(c, s)| c - 0.5 * s).collect();
                    let r = c.iter().zip(&s).map(|(c, s)| c + 0.5 * s).collect();
                    (l, r)
                })
                .unzip(),
        };
        // walls mirror the reconstructed face state so no mass crosses them
        let left_face = self.ghost(&self.mesh.left, &lo[0]);
        let right_face = self.ghost(&self.mesh.right, &hi[n - 1]);
        let table = closure.table();
        let fluxes: Vec<Vec<f64>> = (0..=n)
            .into_par_iter()
            .map(|j| {
                let a = if j == 0 { &left_face } else { &hi[j - 1] };
                let b = if j == n { &right_face } else { &lo[j] };
                upwind_flux(table, a, b, 1.0)
            })
            .collect();

        let dx = self.mesh.dx();
        Ok((0..n)
            .into_par_iter()
            .map(|i| {
                let ss = self.materials.sigma_s[i];
                let sa = self.materials.sigma_a[i];
                let q = self.materials.source[i];
                let coll = collision_moments(&u[i], &self.mean, ss);
                (0..u[i].len())
                    .map(|k| {
                        -(fluxes[i + 1][k] - fluxes[i][k]) / dx + coll[k] - sa * u[i][k]
                            + 0.5 * q * self.mean[k]
                    })
                    .collect()
            })
            .collect())
    }

    fn apply_floor(&self, u: &mut [Vec<f64>]) -> usize {
        if !self.closure.requires_positive_density() {
            return 0;
        }
        let mut events = 0;
        for ui in u.iter_mut() {
            if !(ui[0] >= self.u0_floor) {
                for (x, m) in ui.iter_mut().zip(&self.mean) {
                    *x = 0.5 * self.u0_floor * m;
                }
                events += 1;
            }
        }
        events
    }

    /// One step of Heun's method (explicit trapezoid).
    pub fn step_heun(&self, state: &GridState, dt: f64) -> Result<GridState> {
        let k1 = self.rhs(&state.u, state.time)?;
        let mut stage: Vec<Vec<f64>> = state
            .u
            .iter()
            .zip(&k1)
            .map(|(u, k)| u.iter().zip(k).map(|(u, k)| u + dt * k).collect())
            .collect();
        let mut events = self.apply_floor(&mut stage);
        let k2 = self.rhs(&stage, state.time + dt)?;
        let mut next: Vec<Vec<f64>> = state
            .u
            .iter()
            .zip(k1.iter().zip(&k2))
            .map(|(u, (a, b))| {
                u.iter()
                    .zip(a.iter().zip(b))
                    .map(|(u, (a, b))| u + 0.5 * dt * (a + b))
                    .collect()
            })
            .collect();
        events += self.apply_floor(&mut next);
        for (i, u) in next.iter().enumerate() {
            if u.iter().any(|x| !x.is_finite()) {
                return Err(Error::Domain("non-finite moments".into()).in_cell(i, state.time + dt));
            }
        }
        Ok(GridState {
            u: next,
            time: state.time + dt,
            step: state.step + 1,
            floor_events: state.floor_events + events,
        })
    }

    /// `sum_i h(u_i) dx`, or `None` for closures without an entropy.
    pub fn total_entropy(&self, state: &GridState) -> Option<Result<f64>> {
        let vals: Vec<Option<Result<f64>>> = state
            .u
            .par_iter()
            .enumerate()
            .map(|(i, u)| {
                self.closure
                    .entropy(u)
                    .map(|h| h.map_err(|e| e.in_cell(i, state.time)))
            })
            .collect();
        let vals: Option<Vec<Result<f64>>> = vals.into_iter().collect();
        Some(vals?.into_iter().sum::<Result<f64>>().map(|s| s * self.mesh.dx()))
    }
}
