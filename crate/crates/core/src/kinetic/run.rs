use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{CaseSetup, Closure, GridState, MomentSolver, Reconstruction, SnSolver, DEFAULT_U0_FLOOR};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunOptions {
    /// Number of evenly spaced snapshots, the last one at `t_final`.
    pub snapshots: usize,
    /// Record `sum_i h(u_i) dx` after every step.
    pub track_entropy: bool,
    pub reconstruction: Reconstruction,
    pub u0_floor: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            snapshots: 5,
            track_entropy: true,
            reconstruction: Reconstruction::FirstOrder,
            u0_floor: DEFAULT_U0_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    pub step: usize,
    /// Moments `u_0..u_N` per cell.
    pub u: Vec<Vec<f64>>,
}

impl Snapshot {
    pub fn densities(&self) -> Vec<f64> {
        self.u.iter().map(|u| u[0]).collect()
    }

    /// Whitespace-separated table with columns `x u_0 .. u_N`.
    pub fn write_table<W: Write>(&self, x: &[f64], mut out: W) -> Result<()> {
        let n = self.u.first().map_or(0, Vec::len);
        write!(out, "# t = {:e}\n# x", self.time)?;
        for k in 0..n {
            write!(out, " u_{k}")?;
        }
        writeln!(out)?;
        for (x, u) in x.iter().zip(&self.u) {
            write!(out, "{x:e}")?;
            for v in u {
                write!(out, " {v:e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub cells: usize,
    pub dx: f64,
    pub dt: f64,
    pub steps: usize,
    /// Time of each trace entry, starting at 0.
    pub times: Vec<f64>,
    pub mass: Vec<f64>,
    /// Total entropy per step, for closures that have one.
    pub entropy: Option<Vec<f64>>,
    pub floor_events: usize,
    /// Steps after which some cell had `u_0 < 0`.
    pub negative_u0_steps: usize,
    pub max_negative_u0_cells: usize,
    pub first_negative_u0_time: Option<f64>,
    pub min_u0: f64,
    pub wall_time_s: f64,
    pub e_rel: Option<f64>,
    pub reference: Option<String>,
}

impl Diagnostics {
    fn new(setup: &CaseSetup, dt: f64, steps: usize) -> Self {
        Self {
            cells: setup.mesh.cells,
            dx: setup.mesh.dx(),
            dt,
            steps,
            times: Vec::with_capacity(steps + 1),
            mass: Vec::with_capacity(steps + 1),
            entropy: None,
            floor_events: 0,
            negative_u0_steps: 0,
            max_negative_u0_cells: 0,
            first_negative_u0_time: None,
            min_u0: f64::INFINITY,
            wall_time_s: 0.0,
            e_rel: None,
            reference: None,
        }
    }

    fn record_densities(&mut self, time: f64, u0: impl Iterator<Item = f64>) {
        let mut negative = 0;
        for x in u0 {
            self.min_u0 = self.min_u0.min(x);
            if x < 0.0 {
                negative += 1;
            }
        }
        if negative > 0 {
            self.negative_u0_steps += 1;
            self.max_negative_u0_cells = self.max_negative_u0_cells.max(negative);
            self.first_negative_u0_time.get_or_insert(time);
        }
    }

    /// Largest one-step entropy increase.
    pub fn max_entropy_increase(&self) -> Option<f64> {
        let e = self.entropy.as_ref()?;
        Some(e.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max))
    }

    /// `max |m_k - m_0| / |m_0|` over the mass trace.
    pub fn relative_mass_drift(&self) -> f64 {
        let m0 = self.mass[0];
        self.mass.iter().map(|m| (m - m0).abs() / m0.abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub case: String,
    /// Closure name or `sn`.
    pub method: String,
    pub order: usize,
    /// Unknowns per cell.
    pub system_size: usize,
    pub x: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub diagnostics: Diagnostics,
}

impl RunResult {
    pub fn final_densities(&self) -> Vec<f64> {
        self.snapshots.last().map(Snapshot::densities).unwrap_or_default()
    }

    /// Sets the diagnostics' `e_rel` against a reference run.
    pub fn compare_with(&mut self, reference: &RunResult) -> Result<f64> {
        let e = e_rel(&self.final_densities(), &reference.final_densities())?;
        self.diagnostics.e_rel = Some(e);
        self.diagnostics.reference = Some(format!("{} (N = {})", reference.method, reference.order));
        Ok(e)
    }
}

fn snapshot_steps(steps: usize, count: usize) -> Vec<usize> {
    let count = count.max(1);
    let mut out: Vec<usize> = if count == 1 {
        vec![steps]
    } else {
        (0..count).map(|j| (j * steps + (count - 1) / 2) / (count - 1)).collect()
    };
    out.dedup();
    out
}

/// Runs a moment closure on a case.
pub fn run_moments(setup: &CaseSetup, closure: &dyn Closure, options: &RunOptions) -> Result<RunResult> {
    setup.validate()?;
    let start = Instant::now();
    let mut solver = MomentSolver::new(&setup.mesh, &setup.materials, closure)?;
    solver.reconstruction = options.reconstruction;
    solver.u0_floor = options.u0_floor;
    let (steps, dt) = setup.time_steps();
    let wanted = snapshot_steps(steps, options.snapshots);
    let dx = setup.mesh.dx();

    let mut diag = Diagnostics::new(setup, dt, steps);
    let mut state = solver.project(&setup.initial);
    let mut snapshots = Vec::with_capacity(wanted.len());
    let track_entropy = options.track_entropy && closure.entropy(&state.u[0]).is_some();
    if track_entropy {
        diag.entropy = Some(Vec::with_capacity(steps + 1));
    }
    let mut record = |state: &GridState, diag: &mut Diagnostics| -> Result<()> {
        diag.times.push(state.time);
        diag.mass.push(state.mass(dx));
        diag.record_densities(state.time, state.u.iter().map(|u| u[0]));
        if track_entropy {
            let h = solver.total_entropy(state).expect("entropy availability checked")?;
            diag.entropy.as_mut().expect("allocated").push(h);
        }
        if wanted.binary_search(&state.step).is_ok() {
            snapshots.push(Snapshot {
                time: state.time,
                step: state.step,
                u: state.u.clone(),
            });
        }
        Ok(())
    };
    record(&state, &mut diag)?;
    for _ in 0..steps {
        state = solver.step_heun(&state, dt)?;
        record(&state, &mut diag)?;
    }
    diag.floor_events = state.floor_events;
    diag.wall_time_s = start.elapsed().as_secs_f64();
    Ok(RunResult {
        case: setup.name.clone(),
        method: closure.name().to_string(),
        order: closure.order(),
        system_size: closure.order() + 1,
        x: setup.mesh.centers(),
        snapshots,
        diagnostics: diag,
    })
}

/// Runs the discrete-ordinates reference; snapshots hold moments up to
/// `order`.
pub fn run_sn(setup: &CaseSetup, ordinates: usize, order: usize, options: &RunOptions) -> Result<RunResult> {
    setup.validate()?;
    let start = Instant::now();
    let solver = SnSolver::new(&setup.mesh, &setup.materials, ordinates)?;
    let (steps, dt) = setup.time_steps();
    let wanted = snapshot_steps(steps, options.snapshots);

    let mut diag = Diagnostics::new(setup, dt, steps);
    let mut state = solver.project(&setup.initial);
    let mut snapshots = Vec::with_capacity(wanted.len());
    let mut record = |state: &GridState, diag: &mut Diagnostics| -> Result<()> {
        diag.times.push(state.time);
        diag.mass.push(solver.mass(state));
        let w = solver.rule().weights();
        diag.record_densities(
            state.time,
            state.u.iter().map(|f| w.iter().zip(f).map(|(w, f)| w * f).sum::<f64>()),
        );
        if wanted.binary_search(&state.step).is_ok() {
            snapshots.push(Snapshot {
                time: state.time,
                step: state.step,
                u: solver.moments(state, order)?,
            });
        }
        Ok(())
    };
    record(&state, &mut diag)?;
    for _ in 0..steps {
        state = solver.step_heun(&state, dt)?;
        record(&state, &mut diag)?;
    }
    diag.wall_time_s = start.elapsed().as_secs_f64();
    Ok(RunResult {
        case: setup.name.clone(),
        method: "sn".into(),
        order: ordinates,
        system_size: ordinates,
        x: setup.mesh.centers(),
        snapshots,
        diagnostics: diag,
    })
}

/// `sum |u_ref - u| / sum |u_ref|` on a common uniform grid. A reference on
/// an integer refinement of the numerical grid is block-averaged first.
pub fn e_rel(u0_num: &[f64], u0_ref: &[f64]) -> Result<f64> {
    if u0_num.is_empty() || u0_ref.len() % u0_num.len() != 0 {
        return Err(Error::Domain(format!(
            "grids of {} and {} cells are not nested",
            u0_num.len(),
            u0_ref.len()
        )));
    }
    let r = u0_ref.len() / u0_num.len();
    let reference: Vec<f64> = u0_ref.chunks(r).map(|c| c.iter().sum::<f64>() / r as f64).collect();
    let norm: f64 = reference.iter().map(|x| x.abs()).sum();
    if !(norm > 0.0) {
        return Err(Error::Domain("reference field has zero norm".into()));
    }
    let diff: f64 = reference.iter().zip(u0_num).map(|(a, b)| (a - b).abs()).sum();
    Ok(diff / norm)
}
