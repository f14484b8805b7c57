//! Training data generation by rejection sampling of reduced multipliers
//! from `B = { beta : |beta| < M, lambda_min(H-hat^gamma(beta)) > tau }`.
//!
//! Each accepted `beta` is lifted to `alpha = [vartheta(beta), beta]` and
//! mapped to the normalized moment `u-bar = [1, psi^gamma(beta)]` and the
//! reduced entropy `h-hat^gamma(u-bar_#)`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entropy::{eigen_extremes, ClosureConfig, EntropyModel};
use crate::quadrature::DEFAULT_ORDER;
use crate::rng::{indexed_substream, Stream};
use crate::{Error, Result};

/// Consecutive rejections after which generation gives up.
pub const MAX_CONSECUTIVE_REJECTIONS: u64 = 1_000_000;

fn default_workers() -> usize {
    1
}

fn default_quad_order() -> usize {
    DEFAULT_ORDER
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub order: usize,
    pub gamma: f64,
    pub norm_bound: f64,
    pub tau: f64,
    pub count: usize,
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
}

impl SamplerConfig {
    /// Slab-geometry defaults for orders 1 to 4: `M = 40, 20, 12, 8`, `tau = 1e-4`.
    pub fn for_order(order: usize, gamma: f64, count: usize, seed: u64) -> Self {
        let norm_bound = match order {
            1 => 40.0,
            2 => 20.0,
            3 => 12.0,
            _ => 8.0,
        };
        Self {
            order,
            gamma,
            norm_bound,
            tau: 1e-4,
            count,
            seed,
            workers: 1,
            quad_order: DEFAULT_ORDER,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::Config("order must be at least 1".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.norm_bound > 0.0) {
            return Err(Error::Config(format!("M must be positive, got {}", self.norm_bound)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.count == 0 {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    fn model(&self) -> Result<EntropyModel> {
        let mut c = ClosureConfig::partially_regularized(self.order, self.gamma);
        c.quad_order = self.quad_order;
        EntropyModel::new(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    /// Reduced entropy `h-hat^gamma(u-bar_#)`.
    pub h: f64,
    /// Normalized moment, `u_bar[0] == 1`.
    pub u_bar: Vec<f64>,
    /// Full multiplier `[vartheta(beta), beta]`.
    pub alpha: Vec<f64>,
}

impl TrainingSample {
    pub fn w(&self) -> &[f64] {
        &self.u_bar[1..]
    }

    pub fn beta(&self) -> &[f64] {
        &self.alpha[1..]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplerStats {
    pub drawn: u64,
    pub accepted: u64,
    /// Draws with `lambda_min <= tau`.
    pub rejected_eigenvalue: u64,
    /// Draws tripping the exponent overflow guard.
    pub rejected_overflow: u64,
    pub max_consecutive_rejections: u64,
}

impl SamplerStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.drawn == 0 {
            return 0.0;
        }
        self.accepted as f64 / self.drawn as f64
    }

    pub fn overflow_rate(&self) -> f64 {
        if self.drawn == 0 {
            return 0.0;
        }
        self.rejected_overflow as f64 / self.drawn as f64
    }

    fn merge(&mut self, other: &SamplerStats) {
        self.drawn += other.drawn;
        self.accepted += other.accepted;
        self.rejected_eigenvalue += other.rejected_eigenvalue;
        self.rejected_overflow += other.rejected_overflow;
        self.max_consecutive_rejections = self
            .max_consecutive_rejections
            .max(other.max_consecutive_rejections);
    }
}

/// Sidecar metadata stored next to a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub order: usize,
    pub gamma: f64,
    pub norm_bound: f64,
    pub tau: f64,
    pub count: usize,
    pub seed: u64,
    pub workers: usize,
    pub quad_order: usize,
    #[serde(default)]
    pub stats: SamplerStats,
}

impl DatasetMeta {
    pub fn from_config(config: &SamplerConfig, stats: SamplerStats) -> Self {
        Self {
            order: config.order,
            gamma: config.gamma,
            norm_bound: config.norm_bound,
            tau: config.tau,
            count: config.count,
            seed: config.seed,
            workers: config.workers,
            quad_order: config.quad_order,
            stats,
        }
    }

    /// Errors unless the generating parameters agree with `config`.
    pub fn check_matches(&self, config: &SamplerConfig) -> Result<()> {
        let mut diffs = Vec::new();
        if self.order != config.order {
            diffs.push(format!("order {} vs {}", self.order, config.order));
        }
        if self.gamma != config.gamma {
            diffs.push(format!("gamma {} vs {}", self.gamma, config.gamma));
        }
        if self.norm_bound != config.norm_bound {
            diffs.push(format!("M {} vs {}", self.norm_bound, config.norm_bound));
        }
        if self.tau != config.tau {
            diffs.push(format!("tau {} vs {}", self.tau, config.tau));
        }
        if self.count != config.count {
            diffs.push(format!("count {} vs {}", self.count, config.count));
        }
        if self.seed != config.seed {
            diffs.push(format!("seed {} vs {}", self.seed, config.seed));
        }
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(Error::Metadata(format!(
                "dataset does not match requested config: {}",
                diffs.join(", ")
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub samples: Vec<TrainingSample>,
}

impl Dataset {
    pub fn order(&self) -> usize {
        self.meta.order
    }

    pub fn gamma(&self) -> f64 {
        self.meta.gamma
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Uniform draw from the open ball `{ |x| < radius }` in `R^dim`.
pub fn sample_ball<R: Rng + ?Sized>(dim: usize, radius: f64, rng: &mut R) -> Vec<f64> {
    let mut x: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let mut norm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    while norm == 0.0 {
        x = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        norm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    }
    let u: f64 = rng.random();
    let r = radius * u.powf(1.0 / dim as f64);
    x.iter().map(|a| a * r / norm).collect()
}

/// Sample for an accepted reduced multiplier.
pub fn sample_from_beta(model: &EntropyModel, beta: &[f64], gamma: f64) -> Result<TrainingSample> {
    let alpha = model.lift_multiplier(beta, 1.0)?;
    let w = model.psi(beta, gamma)?;
    let h = -model.dual_objective_reduced(beta, &w, gamma)?;
    let mut u_bar = Vec::with_capacity(w.len() + 1);
    u_bar.push(1.0);
    u_bar.extend(w);
    Ok(TrainingSample { h, u_bar, alpha })
}

enum Draw {
    Accepted(TrainingSample),
    Eigenvalue,
    Overflow,
}

fn draw(model: &EntropyModel, config: &SamplerConfig, rng: &mut Stream) -> Result<Draw> {
    let beta = sample_ball(config.order, config.norm_bound, rng);
    let hessian = match model.reduced_hessian(&beta, config.gamma) {
        Ok(h) => h,
        Err(Error::Overflow(_)) => return Ok(Draw::Overflow),
        Err(e) => return Err(e),
    };
    let (lambda_min, _) = eigen_extremes(&hessian);
    if !(lambda_min > config.tau) {
        return Ok(Draw::Eigenvalue);
    }
    match sample_from_beta(model, &beta, config.gamma) {
        Ok(s) => Ok(Draw::Accepted(s)),
        Err(Error::Overflow(_)) => Ok(Draw::Overflow),
        Err(e) => Err(e),
    }
}

fn generate_worker(
    model: &EntropyModel,
    config: &SamplerConfig,
    worker: usize,
    count: usize,
) -> Result<(Vec<TrainingSample>, SamplerStats)> {
    let mut rng = indexed_substream(config.seed, "sampler", worker as u64);
    let mut stats = SamplerStats::default();
    let mut samples = Vec::with_capacity(count);
    let mut consecutive = 0u64;
    while samples.len() < count {
        stats.drawn += 1;
        match draw(model, config, &mut rng)? {
            Draw::Accepted(s) => {
                samples.push(s);
                stats.accepted += 1;
                consecutive = 0;
                continue;
            }
            Draw::Eigenvalue => stats.rejected_eigenvalue += 1,
            Draw::Overflow => stats.rejected_overflow += 1,
        }
        consecutive += 1;
        stats.max_consecutive_rejections = stats.max_consecutive_rejections.max(consecutive);
        if consecutive >= MAX_CONSECUTIVE_REJECTIONS {
            return Err(Error::Config(format!(
                "{consecutive} consecutive rejections: tau = {} is too large for M = {}, gamma = {}",
                config.tau, config.norm_bound, config.gamma
            )));
        }
    }
    Ok((samples, stats))
}

/// Generates exactly `config.count` samples.
///
/// Worker `i` draws from its own substream of `config.seed` and the outputs
/// are concatenated in worker order, so the result depends only on the seed
/// and the worker count. The substream does not depend on `gamma`.
pub fn generate(config: &SamplerConfig) -> Result<Dataset> {
    config.validate()?;
    let model = config.model()?;
    let workers = config.workers.min(config.count);
    let base = config.count / workers;
    let extra = config.count % workers;
    let parts: Vec<Result<(Vec<TrainingSample>, SamplerStats)>> = (0..workers)
        .into_par_iter()
        .map(|i| generate_worker(&model, config, i, base + usize::from(i < extra)))
        .collect();
    let mut samples = Vec::with_capacity(config.count);
    let mut stats = SamplerStats::default();
    for part in parts {
        let (s, st) = part?;
        samples.extend(s);
        stats.merge(&st);
    }
    let mut meta_config = config.clone();
    meta_config.workers = workers;
    Ok(Dataset {
        meta: DatasetMeta::from_config(&meta_config, stats),
        samples,
    })
}

/// Path of the metadata sidecar for a dataset file.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn header(order: usize) -> String {
    let mut cols = vec!["h".to_string()];
    cols.extend((1..=order).map(|i| format!("u_{i}")));
    cols.extend((0..=order).map(|i| format!("alpha_{i}")));
    cols.join(",")
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let n = dataset.order();
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{}", header(n))?;
    for s in &dataset.samples {
        if s.u_bar.len() != n + 1 || s.alpha.len() != n + 1 {
            return Err(Error::Domain(format!(
                "sample has wrong length for order {n}"
            )));
        }
        let fields: Vec<String> = std::iter::once(s.h)
            .chain(s.u_bar[1..].iter().copied())
            .chain(s.alpha.iter().copied())
            .map(|x| format!("{x:e}"))
            .collect();
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    fs::write(meta_path(path), serde_json::to_string_pretty(&dataset.meta)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let meta_file = meta_path(path);
    let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(&meta_file).map_err(|e| {
        Error::Metadata(format!("cannot read {}: {e}", meta_file.display()))
    })?)?;
    let n = meta.order;
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines();
    let first = match lines.next() {
        Some(l) => l?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "empty dataset file".into(),
            })
        }
    };
    if first.trim() != header(n) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`, found `{}`", header(n), first.trim()),
        });
    }
    let width = 2 * n + 2;
    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno,
                    message: format!("bad number `{}`: {e}", f.trim()),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != width {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {width} fields, found {}", values.len()),
            });
        }
        let mut u_bar = vec![1.0];
        u_bar.extend_from_slice(&values[1..=n]);
        samples.push(TrainingSample {
            h: values[0],
            u_bar,
            alpha: values[n + 1..].to_vec(),
        });
    }
    if samples.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "dataset contains no samples".into(),
        });
    }
    if samples.len() != meta.count {
        return Err(Error::Metadata(format!(
            "metadata records {} samples, file has {}",
            meta.count,
            samples.len()
        )));
    }
    Ok(Dataset { meta, samples })
}

/// Reads a dataset and checks it was generated with `config`.
pub fn read_dataset_checked(path: &Path, config: &SamplerConfig) -> Result<Dataset> {
    let d = read_dataset(path)?;
    d.meta.check_matches(config)?;
    Ok(d)
}
