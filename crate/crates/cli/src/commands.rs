use std::path::{Path, PathBuf};

use regclosure::kinetic::{
    run_moments, run_sn, CaseKind, CaseOverrides, ClosureRegistry, ClosureRequest, Diagnostics, RunResult,
};
use regclosure::sampler::{generate, read_dataset, write_dataset, SamplerStats};
use regclosure::surrogate::{
    combined_test_errors, test_errors, train, NewtonEntropy, ReducedEntropy, TestErrors, TrainedClosure,
};
use serde::{Deserialize, Serialize};

use crate::config::{ClosureSpec, ExperimentConfig};
use crate::rundir::RunDir;
use crate::{CliError, Result};

pub const DATASET: &str = "dataset.csv";
pub const MODEL: &str = "model.json";
pub const RUNS: &str = "runs";
pub const RUN_RECORD: &str = "run.json";

/// A dataset file, or a sample run directory holding one.
pub fn dataset_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(DATASET)
    } else {
        path.to_path_buf()
    }
}

/// A model file, or a train run directory holding one.
pub fn model_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MODEL)
    } else {
        path.to_path_buf()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleSummary {
    pub dataset: PathBuf,
    pub samples: usize,
    pub stats: SamplerStats,
    pub acceptance_rate: f64,
    pub overflow_rate: f64,
}

pub fn sample(cfg: &ExperimentConfig, out: &Path) -> Result<SampleSummary> {
    let sampler = cfg.sampler.resolve(cfg.seed);
    let data = generate(&sampler)?;
    let mut run = RunDir::create(out, "sample", cfg)?;
    let path = run.path(DATASET);
    write_dataset(&data, &path)?;
    run.record(DATASET)?;
    run.record(&format!("{DATASET}.meta.json"))?;
    run.finish()?;
    let stats = data.meta.stats.clone();
    Ok(SampleSummary {
        dataset: path,
        samples: data.len(),
        acceptance_rate: stats.acceptance_rate(),
        overflow_rate: stats.overflow_rate(),
        stats,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub model: PathBuf,
    pub epochs: usize,
    pub final_train_loss: f64,
    pub final_test_loss: f64,
    pub test_errors: TestErrors,
}

pub fn train_model(cfg: &ExperimentConfig, data: &Path, out: &Path) -> Result<TrainSummary> {
    let trainer = cfg.trainer.resolve(cfg.seed);
    trainer.validate()?;
    let data_file = dataset_path(data);
    let dataset = read_dataset(&data_file)?;
    let trained = train(&dataset, &trainer)?;

    let mut run = RunDir::create(out, "train", cfg)?;
    run.record_input(&data_file)?;
    let model = run.path(MODEL);
    trained.save(&model)?;
    run.record(MODEL)?;
    let mut history = String::from("epoch,train_loss,test_loss\n");
    for r in &trained.history {
        history.push_str(&format!("{},{:e},{:e}\n", r.epoch, r.train_loss, r.test_loss));
    }
    run.write("history.csv", history.as_bytes())?;
    run.finish()?;
    let last = trained.history.last().expect("history has the initial record");
    Ok(TrainSummary {
        model,
        epochs: trained.epochs,
        final_train_loss: last.train_loss,
        final_test_loss: last.test_loss,
        test_errors: trained.test_errors,
    })
}

/// Where `eval-closure` gets its reduced entropy from.
pub enum ModelSource {
    /// The Newton solver at the dataset's order and regularization.
    Newton,
    File(PathBuf),
}

impl ModelSource {
    pub fn parse(arg: &Path) -> Self {
        if arg.as_os_str() == "newton" {
            ModelSource::Newton
        } else {
            ModelSource::File(model_path(arg))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub model: String,
    pub samples: usize,
    pub errors: TestErrors,
    /// Against a non-regularized reference set, when one was given.
    pub combined: Option<TestErrors>,
}

pub fn eval_closure(
    cfg: &ExperimentConfig,
    model: &ModelSource,
    data: &Path,
    reference: Option<&Path>,
    out: Option<&Path>,
) -> Result<EvalSummary> {
    let data_file = dataset_path(data);
    let dataset = read_dataset(&data_file)?;
    let (name, closure): (String, Box<dyn ReducedEntropy>) = match model {
        ModelSource::Newton => (
            "newton".into(),
            Box::new(NewtonEntropy::new(dataset.order(), dataset.gamma())?),
        ),
        ModelSource::File(path) => (path.display().to_string(), Box::new(TrainedClosure::load(path)?.entropy()?)),
    };
    if closure.order() != dataset.order() {
        return Err(CliError::Config(format!(
            "model order {} does not match dataset order {}",
            closure.order(),
            dataset.order()
        )));
    }
    let errors = test_errors(closure.as_ref(), &dataset.samples)?;
    let combined = match reference {
        Some(r) => {
            let ref_set = read_dataset(&dataset_path(r))?;
            if ref_set.gamma() != 0.0 || ref_set.order() != dataset.order() {
                return Err(CliError::Config(
                    "the reference set must be non-regularized and of the same order".into(),
                ));
            }
            Some(combined_test_errors(closure.as_ref(), &ref_set.samples)?)
        }
        None => None,
    };
    let summary = EvalSummary {
        model: name,
        samples: dataset.len(),
        errors,
        combined,
    };
    if let Some(out) = out {
        let mut run = RunDir::create(out, "eval-closure", cfg)?;
        run.record_input(&data_file)?;
        if let ModelSource::File(p) = model {
            run.record_input(p)?;
        }
        run.write_json("errors.json", &summary)?;
        run.finish()?;
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRef {
    pub file: String,
    pub time: f64,
    pub step: usize,
}

/// Everything a run directory says about one transport run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub case: String,
    pub method: String,
    pub order: usize,
    pub system_size: usize,
    pub snapshots: Vec<SnapshotRef>,
    pub diagnostics: Diagnostics,
}

fn write_run(run: &mut RunDir, label: &str, result: &RunResult) -> Result<RunRecord> {
    let mut snapshots = Vec::new();
    for (k, s) in result.snapshots.iter().enumerate() {
        let file = format!("snapshot_{k:03}.txt");
        let mut table = Vec::new();
        s.write_table(&result.x, &mut table)?;
        run.write(&format!("{RUNS}/{label}/{file}"), &table)?;
        snapshots.push(SnapshotRef {
            file,
            time: s.time,
            step: s.step,
        });
    }
    let record = RunRecord {
        label: label.into(),
        case: result.case.clone(),
        method: result.method.clone(),
        order: result.order,
        system_size: result.system_size,
        snapshots,
        diagnostics: result.diagnostics.clone(),
    };
    run.write_json(&format!("{RUNS}/{label}/{RUN_RECORD}"), &record)?;
    Ok(record)
}

fn run_one(
    cfg: &ExperimentConfig,
    spec: &ClosureSpec,
    overrides: &CaseOverrides,
    registry: &ClosureRegistry,
    run: &mut RunDir,
) -> Result<RunResult> {
    let solver = &cfg.solver;
    let setup = CaseKind::parse(&solver.case)?.setup(overrides)?;
    let options = solver.run_options();
    if spec.name == "sn" {
        return Ok(run_sn(&setup, spec.ordinates, spec.order, &options)?);
    }
    let mut request = ClosureRequest::new(spec.order, spec.gamma);
    request.quad_order = spec.quad_order;
    if let Some(m) = &spec.model {
        let path = model_path(m);
        run.record_input(&path)?;
        request.model = Some(TrainedClosure::load(&path)?);
    }
    let closure = registry.build(&spec.name, &request)?;
    Ok(run_moments(&setup, closure.as_ref(), &options)?)
}

pub fn solve(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let solver = &cfg.solver;
    let registry = ClosureRegistry::default();
    let mut run = RunDir::create(out, "solve", cfg)?;
    let mut records = Vec::new();

    let reference = match &solver.reference {
        Some(r) => {
            let case = CaseKind::parse(&solver.case)?;
            let dx = solver.dx.unwrap_or(case.defaults().0) / r.refinement as f64;
            let overrides = CaseOverrides {
                dx: Some(dx),
                ..solver.overrides()
            };
            let spec = ClosureSpec {
                name: "sn".into(),
                ordinates: r.ordinates,
                ..Default::default()
            };
            let result = run_one(cfg, &spec, &overrides, &registry, &mut run)?;
            records.push(write_run(&mut run, &reference_label(&spec), &result)?);
            Some(result)
        }
        None => None,
    };
    for spec in &solver.closures {
        let mut result = run_one(cfg, spec, &solver.overrides(), &registry, &mut run)?;
        if let Some(reference) = &reference {
            result.compare_with(reference)?;
            result.diagnostics.reference = Some(records[0].label.clone());
        }
        records.push(write_run(&mut run, &spec.label(), &result)?);
    }
    run.finish()?;
    Ok(records)
}

pub fn reference_label(spec: &ClosureSpec) -> String {
    format!("reference-{}", spec.label())
}
