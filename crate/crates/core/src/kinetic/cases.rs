use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Boundary, MaterialField, Mesh1D};
use crate::{Error, Result};

/// Initial kinetic density `f0(x, v)`.
pub type InitialDensity = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Density floor of the plane-source and slab setups.
pub const EPSILON: f64 = 1e-4;

/// Width parameter of the plane-source Gaussian.
pub const PULSE_WIDTH: f64 = 0.0032;

/// Interface between the scattering and the absorbing region of the slab.
pub const SLAB_INTERFACE: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    /// Isotropic Gaussian pulse in a purely scattering medium.
    PlaneSource,
    /// Weakly scattering region next to a thick absorber, lit from the left.
    TwoMaterialSlab,
    /// Pure absorber `[0, 1]` with unit inflow on the left.
    AbsorbingSlab,
}

impl CaseKind {
    pub fn name(self) -> &'static str {
        match self {
            CaseKind::PlaneSource => "plane_source",
            CaseKind::TwoMaterialSlab => "two_material_slab",
            CaseKind::AbsorbingSlab => "absorbing_slab",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "plane_source" => Ok(CaseKind::PlaneSource),
            "two_material_slab" => Ok(CaseKind::TwoMaterialSlab),
            "absorbing_slab" => Ok(CaseKind::AbsorbingSlab),
            _ => Err(Error::Config(format!(
                "unknown case `{name}`; available: plane_source, two_material_slab, absorbing_slab"
            ))),
        }
    }

    /// `(dx, cfl, t_final)` defaults.
    pub fn defaults(self) -> (f64, f64, f64) {
        match self {
            CaseKind::PlaneSource => (1e-2, 0.3, 0.75),
            CaseKind::TwoMaterialSlab => (5e-3, 0.2, 2.0),
            CaseKind::AbsorbingSlab => (5e-3, 0.3, 4.0),
        }
    }

    pub fn setup(self, overrides: &CaseOverrides) -> Result<CaseSetup> {
        let (dx0, cfl0, tf0) = self.defaults();
        let dx = overrides.dx.unwrap_or(dx0);
        let cfl = overrides.cfl.unwrap_or(cfl0);
        let t_final = overrides.t_final.unwrap_or(tf0);
        let (mesh, materials, initial): (Mesh1D, MaterialField, InitialDensity) = match self {
            CaseKind::PlaneSource => {
                let mesh = Mesh1D::with_spacing(-1.0, 1.0, dx, Boundary::constant(EPSILON), Boundary::constant(EPSILON))?;
                let materials = MaterialField::uniform(mesh.cells, 1.0, 0.0, 0.0);
                let initial: InitialDensity = Arc::new(|x, _v| {
                    let c = PULSE_WIDTH;
                    EPSILON.max((-x * x / (4.0 * c)).exp() / (4.0 * std::f64::consts::PI * c).sqrt())
                });
                (mesh, materials, initial)
            }
            CaseKind::TwoMaterialSlab => {
                let mesh = Mesh1D::with_spacing(-0.65, 0.65, dx, Boundary::constant(1.0), Boundary::constant(EPSILON))?;
                let mut materials = MaterialField::uniform(mesh.cells, 0.1, 0.0, 0.0);
                for i in 0..mesh.cells {
                    if mesh.center(i) >= SLAB_INTERFACE {
                        materials.sigma_s[i] = 95.0;
                        materials.sigma_a[i] = 5.0;
                    }
                }
                (mesh, materials, Arc::new(|_, _| EPSILON))
            }
            CaseKind::AbsorbingSlab => {
                let left = Boundary::Dirichlet(Arc::new(|v| if v > 0.0 { 1.0 } else { 0.0 }));
                let mesh = Mesh1D::with_spacing(0.0, 1.0, dx, left, Boundary::constant(0.0))?;
                let materials = MaterialField::uniform(mesh.cells, 0.0, 1.0, 0.0);
                (mesh, materials, Arc::new(|_, _| 0.0))
            }
        };
        let setup = CaseSetup {
            name: self.name().to_string(),
            mesh,
            materials,
            initial,
            cfl,
            t_final,
        };
        setup.validate()?;
        Ok(setup)
    }
}

/// Optional replacements for a case's mesh width, CFL number and end time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseOverrides {
    pub dx: Option<f64>,
    pub cfl: Option<f64>,
    pub t_final: Option<f64>,
}

#[derive(Clone)]
pub struct CaseSetup {
    pub name: String,
    pub mesh: Mesh1D,
    pub materials: MaterialField,
    pub initial: InitialDensity,
    pub cfl: f64,
    pub t_final: f64,
}

impl CaseSetup {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::Config(format!("CFL must lie in (0, 1], got {}", self.cfl)));
        }
        if !(self.t_final >= 0.0) || !self.t_final.is_finite() {
            return Err(Error::Config(format!("t_final must be finite and non-negative, got {}", self.t_final)));
        }
        self.materials.validate(self.mesh.cells)
    }

    /// Number of uniform steps reaching `t_final` with `dt <= cfl dx`, and `dt`.
    pub fn time_steps(&self) -> (usize, f64) {
        let max_dt = self.cfl * self.mesh.dx();
        let n = (self.t_final / max_dt * (1.0 - 1e-12)).ceil().max(0.0) as usize;
        if n == 0 {
            (0, 0.0)
        } else {
            (n, self.t_final / n as f64)
        }
    }
}

impl std::fmt::Debug for CaseSetup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CaseSetup")
            .field("name", &self.name)
            .field("mesh", &self.mesh)
            .field("cfl", &self.cfl)
            .field("t_final", &self.t_final)
            .finish_non_exhaustive()
    }
}
