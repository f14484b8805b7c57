use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use regclosure_cli::commands::{self, ModelSource};
use regclosure_cli::config::{ClosureSpec, ExperimentConfig};
use regclosure_cli::{report, CliError, Result};
use serde::Serialize;

/// Regularized entropy closures: sampling, training, evaluation, transport
/// runs and reports.
#[derive(Parser)]
#[command(name = "regclosure", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed, inherited by sections without their own.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a training set.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        norm_bound: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a surrogate on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset file or sample run directory.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        arch: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Test errors of a model (or `newton`) on a labelled set.
    EvalClosure {
        #[command(flatten)]
        common: Common,
        /// Model file, train run directory, or `newton`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Non-regularized set for the combined errors.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run transport closures on a test case.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        case: Option<String>,
        #[arg(long)]
        dx: Option<f64>,
        #[arg(long)]
        cfl: Option<f64>,
        #[arg(long)]
        t_final: Option<f64>,
        /// Replaces the configured closure list with this one closure.
        #[arg(long)]
        closure: Option<String>,
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
        /// Model for `mn-network`; `newton` selects `mn-newton`.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Also run an S_N reference with this many ordinates.
        #[arg(long)]
        reference_ordinates: Option<usize>,
        #[arg(long)]
        snapshots: Option<usize>,
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Summary table and overlay plots for completed runs.
    Report {
        #[command(flatten)]
        common: Common,
        /// Solve directories or single run directories.
        #[arg(long, required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        /// Label of the reference run.
        #[arg(long)]
        reference: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Sample { .. } => "sample",
            Command::Train { .. } => "train",
            Command::EvalClosure { .. } => "eval-closure",
            Command::Solve { .. } => "solve",
            Command::Report { .. } => "report",
        }
    }
}

fn base_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load_or_default(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn print<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("summary serializes"));
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Sample {
            common,
            order,
            gamma,
            norm_bound,
            tau,
            count,
            workers,
            out,
        } => {
            let mut cfg = base_config(&common)?;
            let s = &mut cfg.sampler;
            set(&mut s.order, order);
            set(&mut s.gamma, gamma);
            set(&mut s.count, count);
            set(&mut s.workers, workers);
            if norm_bound.is_some() {
                s.norm_bound = norm_bound;
            }
            if tau.is_some() {
                s.tau = tau;
            }
            if common.seed.is_some() {
                s.seed = common.seed;
            }
            cfg.validate()?;
            print(&commands::sample(&cfg, &out)?);
        }
        Command::Train {
            common,
            data,
            arch,
            epochs,
            width,
            depth,
            learning_rate,
            out,
        } => {
            let mut cfg = base_config(&common)?;
            let t = &mut cfg.trainer;
            set(&mut t.architecture, arch);
            set(&mut t.epochs, epochs);
            set(&mut t.width, width);
            set(&mut t.depth, depth);
            set(&mut t.learning_rate, learning_rate);
            if common.seed.is_some() {
                t.seed = common.seed;
            }
            cfg.validate()?;
            print(&commands::train_model(&cfg, &data, &out)?);
        }
        Command::EvalClosure {
            common,
            model,
            data,
            reference,
            out,
        } => {
            let cfg = base_config(&common)?;
            let source = ModelSource::parse(&model);
            print(&commands::eval_closure(&cfg, &source, &data, reference.as_deref(), out.as_deref())?);
        }
        Command::Solve {
            common,
            case,
            dx,
            cfl,
            t_final,
            closure,
            order,
            gamma,
            model,
            reference_ordinates,
            snapshots,
            out,
        } => {
            let mut cfg = base_config(&common)?;
            let s = &mut cfg.solver;
            set(&mut s.case, case);
            set(&mut s.snapshots, snapshots);
            if dx.is_some() {
                s.dx = dx;
            }
            if cfl.is_some() {
                s.cfl = cfl;
            }
            if t_final.is_some() {
                s.t_final = t_final;
            }
            let model_is_newton = model.as_deref() == Some(Path::new("newton"));
            let name = closure.or_else(|| {
                model
                    .as_ref()
                    .map(|_| if model_is_newton { "mn-newton" } else { "mn-network" }.to_string())
            });
            if let Some(name) = name {
                let mut spec = ClosureSpec {
                    name,
                    ..Default::default()
                };
                if !model_is_newton {
                    spec.model = model;
                }
                s.closures = vec![spec];
            }
            for spec in &mut s.closures {
                set(&mut spec.order, order);
                set(&mut spec.gamma, gamma);
            }
            if let Some(n) = reference_ordinates {
                let mut r = s.reference.clone().unwrap_or_default();
                r.ordinates = n;
                s.reference = Some(r);
            }
            cfg.validate()?;
            let records = commands::solve(&cfg, &out)?;
            let summary: Vec<_> = records
                .iter()
                .map(|r| {
                    let d = &r.diagnostics;
                    serde_json::json!({
                        "label": r.label,
                        "steps": d.steps,
                        "min_u0": d.min_u0,
                        "floor_events": d.floor_events,
                        "negative_u0_steps": d.negative_u0_steps,
                        "mass_drift": d.relative_mass_drift(),
                        "e_rel": d.e_rel,
                        "wall_time_s": d.wall_time_s,
                    })
                })
                .collect();
            print(&summary);
        }
        Command::Report {
            common,
            runs,
            reference,
            out,
        } => {
            let cfg = base_config(&common)?;
            let out = out
                .or_else(|| cfg.report.out_dir.clone())
                .ok_or_else(|| CliError::Config("report needs --out or report.out_dir".into()))?;
            print(&report::report(&cfg, &runs, reference.as_deref(), &out)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json(name));
            ExitCode::FAILURE
        }
    }
}
