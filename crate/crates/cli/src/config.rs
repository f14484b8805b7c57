//! Experiment configuration: one TOML document with `sampler`, `trainer`,
//! `solver` and `report` sections. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use regclosure::kinetic::{CaseKind, CaseOverrides, Reconstruction, RunOptions, DEFAULT_U0_FLOOR};
use regclosure::quadrature::DEFAULT_ORDER;
use regclosure::sampler::SamplerConfig;
use regclosure::surrogate::TrainerConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Seed used by every section that does not set its own.
    pub seed: u64,
    pub sampler: SamplerSection,
    pub trainer: TrainerSection,
    pub solver: SolverSection,
    pub report: ReportSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub order: usize,
    pub gamma: f64,
    /// Defaults to the per-order bound.
    pub norm_bound: Option<f64>,
    pub tau: Option<f64>,
    pub count: usize,
    pub seed: Option<u64>,
    pub workers: usize,
    pub quad_order: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            order: 1,
            gamma: 1e-2,
            norm_bound: None,
            tau: None,
            count: 10_000,
            seed: None,
            workers: 1,
            quad_order: DEFAULT_ORDER,
        }
    }
}

impl SamplerSection {
    pub fn resolve(&self, seed: u64) -> SamplerConfig {
        let mut cfg = SamplerConfig::for_order(self.order, self.gamma, self.count, self.seed.unwrap_or(seed));
        if let Some(m) = self.norm_bound {
            cfg.norm_bound = m;
        }
        if let Some(t) = self.tau {
            cfg.tau = t;
        }
        cfg.workers = self.workers;
        cfg.quad_order = self.quad_order;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSection {
    pub architecture: String,
    pub width: usize,
    pub depth: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub test_fraction: f64,
    pub seed: Option<u64>,
    pub quad_order: usize,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let d = TrainerConfig::default();
        Self {
            architecture: d.architecture,
            width: d.width,
            depth: d.depth,
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            test_fraction: d.test_fraction,
            seed: None,
            quad_order: d.quad_order,
        }
    }
}

impl TrainerSection {
    pub fn resolve(&self, seed: u64) -> TrainerConfig {
        TrainerConfig {
            architecture: self.architecture.clone(),
            width: self.width,
            depth: self.depth,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            test_fraction: self.test_fraction,
            seed: self.seed.unwrap_or(seed),
            quad_order: self.quad_order,
        }
    }
}

/// One transport run. `name` is a closure registry name or `sn`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClosureSpec {
    pub name: String,
    pub order: usize,
    pub gamma: f64,
    pub quad_order: usize,
    /// Trained model for `mn-network`; a file or a train run directory.
    pub model: Option<PathBuf>,
    /// Ordinate count for `sn`.
    pub ordinates: usize,
}

impl Default for ClosureSpec {
    fn default() -> Self {
        Self {
            name: "mn-newton".into(),
            order: 1,
            gamma: 0.0,
            quad_order: DEFAULT_ORDER,
            model: None,
            ordinates: 64,
        }
    }
}

impl ClosureSpec {
    pub fn label(&self) -> String {
        match self.name.as_str() {
            "sn" => format!("sn-{}", self.ordinates),
            "pn" => format!("pn-{}", self.order),
            name => format!("{name}-{}-g{}", self.order, self.gamma),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceSpec {
    pub ordinates: usize,
    /// The reference mesh has `refinement` times as many cells.
    pub refinement: usize,
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        Self {
            ordinates: 64,
            refinement: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub case: String,
    pub dx: Option<f64>,
    pub cfl: Option<f64>,
    pub t_final: Option<f64>,
    pub closures: Vec<ClosureSpec>,
    pub reference: Option<ReferenceSpec>,
    pub snapshots: usize,
    pub track_entropy: bool,
    pub reconstruction: Reconstruction,
    pub u0_floor: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            case: CaseKind::PlaneSource.name().into(),
            dx: None,
            cfl: None,
            t_final: None,
            closures: vec![ClosureSpec {
                gamma: 1e-2,
                ..Default::default()
            }],
            reference: None,
            snapshots: 5,
            track_entropy: true,
            reconstruction: Reconstruction::FirstOrder,
            u0_floor: DEFAULT_U0_FLOOR,
        }
    }
}

impl SolverSection {
    pub fn overrides(&self) -> CaseOverrides {
        CaseOverrides {
            dx: self.dx,
            cfl: self.cfl,
            t_final: self.t_final,
        }
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            snapshots: self.snapshots,
            track_entropy: self.track_entropy,
            reconstruction: self.reconstruction,
            u0_floor: self.u0_floor,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    /// Label of the run used as reference; defaults to the solve reference.
    pub reference: Option<String>,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Checks every section before any computation starts.
    pub fn validate(&self) -> Result<(), CliError> {
        self.sampler.resolve(self.seed).validate()?;
        self.trainer.resolve(self.seed).validate()?;
        let s = &self.solver;
        CaseKind::parse(&s.case)?.setup(&s.overrides())?.validate()?;
        if s.closures.is_empty() {
            return Err(CliError::Config("solver.closures is empty".into()));
        }
        let mut labels = std::collections::BTreeSet::new();
        for c in &s.closures {
            if !labels.insert(c.label()) {
                return Err(CliError::Config(format!("closure {} is listed twice", c.label())));
            }
            if c.name == "mn-network" && c.model.is_none() {
                return Err(CliError::Config("mn-network closure needs a model path".into()));
            }
            if c.name == "sn" && c.ordinates < 4 {
                return Err(CliError::Config("sn needs at least 4 ordinates".into()));
            }
        }
        if let Some(r) = &s.reference {
            if r.refinement == 0 || r.ordinates < 4 {
                return Err(CliError::Config("reference needs refinement >= 1 and ordinates >= 4".into()));
            }
        }
        if !(s.u0_floor >= 0.0) {
            return Err(CliError::Config("solver.u0_floor must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
