//! Comparison tables and overlay plots built from solve run directories.
//! Everything is recomputed from the snapshot tables on disk.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use regclosure::kinetic::e_rel;
use serde::{Deserialize, Serialize};

use crate::commands::{RunRecord, RUNS, RUN_RECORD};
use crate::config::ExperimentConfig;
use crate::rundir::RunDir;
use crate::svg::{line_chart, Series};
use crate::{CliError, Result};

/// Largest accepted gap between a stored and a recomputed `e_rel`.
pub const E_REL_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub time: f64,
    pub x: Vec<f64>,
    /// Moments per cell.
    pub u: Vec<Vec<f64>>,
}

impl Table {
    pub fn densities(&self) -> Vec<f64> {
        self.u.iter().map(|u| u[0]).collect()
    }
}

fn parse_err(path: &Path, line: usize, msg: &str) -> CliError {
    CliError::Report(format!("{}:{}: {msg}", path.display(), line + 1))
}

/// Reads a snapshot table written by `solve`.
pub fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut time = None;
    let mut x = Vec::new();
    let mut u = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix("# t = ") {
            time = Some(rest.trim().parse::<f64>().map_err(|e| parse_err(path, i, &e.to_string()))?);
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(path, i, &e.to_string()))?;
        if values.len() < 2 {
            return Err(parse_err(path, i, "expected x and at least one moment"));
        }
        x.push(values[0]);
        u.push(values[1..].to_vec());
    }
    let time = time.ok_or_else(|| parse_err(path, 0, "missing time header"))?;
    Ok(Table { time, x, u })
}

#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub record: RunRecord,
    pub last: Table,
}

fn load_run(dir: &Path) -> Result<LoadedRun> {
    let path = dir.join(RUN_RECORD);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let record: RunRecord = serde_json::from_str(&text).map_err(|e| CliError::Core(e.into()))?;
    let snap = record
        .snapshots
        .last()
        .ok_or_else(|| CliError::Report(format!("{} has no snapshots", dir.display())))?;
    let last = read_table(&dir.join(&snap.file))?;
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        record,
        last,
    })
}

/// Accepts single run directories and solve directories holding `runs/`.
pub fn collect_runs(paths: &[PathBuf]) -> Result<Vec<LoadedRun>> {
    let mut runs = Vec::new();
    for p in paths {
        if p.join(RUN_RECORD).is_file() {
            runs.push(load_run(p)?);
            continue;
        }
        let dir = p.join(RUNS);
        let entries = fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))?;
        let mut dirs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(RUN_RECORD).is_file())
            .collect();
        dirs.sort();
        for d in dirs {
            runs.push(load_run(&d)?);
        }
    }
    if runs.is_empty() {
        return Err(CliError::Report("no completed runs found".into()));
    }
    let mut seen = BTreeSet::new();
    for r in &runs {
        if !seen.insert(r.record.label.clone()) {
            return Err(CliError::Report(format!("run label {} appears twice", r.record.label)));
        }
    }
    Ok(runs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub method: String,
    pub order: usize,
    pub system_size: usize,
    pub cells: usize,
    pub time: f64,
    pub wall_time_s: f64,
    /// Recomputed from the snapshot tables.
    pub e_rel: Option<f64>,
    /// As stored by the solver.
    pub e_rel_reported: Option<f64>,
    pub note: String,
}

fn block_average(fine: &[f64], cells: usize) -> Option<Vec<f64>> {
    if cells == 0 || fine.len() % cells != 0 {
        return None;
    }
    let r = fine.len() / cells;
    Some(fine.chunks(r).map(|c| c.iter().sum::<f64>() / r as f64).collect())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:e}"))
}

pub fn report(
    cfg: &ExperimentConfig,
    paths: &[PathBuf],
    reference: Option<&str>,
    out: &Path,
) -> Result<Vec<ReportRow>> {
    let runs = collect_runs(paths)?;
    let wanted = reference
        .map(str::to_string)
        .or_else(|| cfg.report.reference.clone())
        .or_else(|| runs.iter().find_map(|r| r.record.diagnostics.reference.clone()));
    let reference = match &wanted {
        Some(label) => Some(
            runs.iter()
                .find(|r| &r.record.label == label)
                .ok_or_else(|| CliError::Report(format!("reference run {label} not found")))?,
        ),
        None => None,
    };

    let mut rows = Vec::new();
    let mut diffs = Vec::new();
    for run in &runs {
        let d = &run.record.diagnostics;
        let mut row = ReportRow {
            label: run.record.label.clone(),
            method: run.record.method.clone(),
            order: run.record.order,
            system_size: run.record.system_size,
            cells: run.last.x.len(),
            time: run.last.time,
            wall_time_s: d.wall_time_s,
            e_rel: None,
            e_rel_reported: d.e_rel,
            note: String::new(),
        };
        if let Some(r) = reference {
            let (num, refd) = (run.last.densities(), r.last.densities());
            if (run.last.time - r.last.time).abs() > 1e-12 * r.last.time.abs().max(1.0) {
                row.note = format!("final time {} differs from reference {}", run.last.time, r.last.time);
            } else if let Some(avg) = block_average(&refd, num.len()) {
                row.e_rel = Some(e_rel(&num, &refd)?);
                if refd.len() != num.len() {
                    row.note = format!("reference block-averaged from {} cells", refd.len());
                }
                diffs.push(Series {
                    label: row.label.clone(),
                    x: run.last.x.clone(),
                    y: num.iter().zip(&avg).map(|(a, b)| a - b).collect(),
                });
            } else {
                row.note = format!("grid of {} cells is not nested in the reference grid of {}", num.len(), refd.len());
            }
            if let (Some(a), Some(b)) = (row.e_rel, row.e_rel_reported) {
                if (a - b).abs() > E_REL_TOLERANCE {
                    return Err(CliError::Report(format!(
                        "{}: recomputed e_rel {a:e} disagrees with the stored {b:e}",
                        row.label
                    )));
                }
            }
        }
        rows.push(row);
    }

    let mut run_dir = RunDir::create(out, "report", cfg)?;
    for run in &runs {
        run_dir.record_input(&run.dir.join(RUN_RECORD))?;
    }
    let mut csv = String::from("label,method,order,system_size,cells,time,wall_time_s,e_rel,e_rel_reported,note\n");
    let mut md = String::from(
        "| closure | system size | cells | wall time [s] | e_rel | note |\n|---|---|---|---|---|---|\n",
    );
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{:e},{:e},{},{},\"{}\"\n",
            r.label,
            r.method,
            r.order,
            r.system_size,
            r.cells,
            r.time,
            r.wall_time_s,
            fmt_opt(r.e_rel),
            fmt_opt(r.e_rel_reported),
            r.note.replace('"', "'")
        ));
        md.push_str(&format!(
            "| {} | {} | {} | {:.3} | {} | {} |\n",
            r.label,
            r.system_size,
            r.cells,
            r.wall_time_s,
            r.e_rel.map_or_else(|| "-".into(), |v| format!("{v:.3e}")),
            r.note
        ));
    }
    if let Some(r) = reference {
        md.push_str(&format!("\nReference: {}\n", r.record.label));
    }
    run_dir.write("summary.csv", csv.as_bytes())?;
    run_dir.write("summary.md", md.as_bytes())?;
    run_dir.write_json("summary.json", &rows)?;

    let case = runs[0].record.case.clone();
    let overlay: Vec<Series> = runs
        .iter()
        .map(|r| Series {
            label: r.record.label.clone(),
            x: r.last.x.clone(),
            y: r.last.densities(),
        })
        .collect();
    let time = runs[0].last.time;
    let chart = line_chart(&format!("{case}: u_0 at t = {time}"), "x", "u_0", &overlay);
    run_dir.write("density.svg", chart.as_bytes())?;
    if let Some(r) = reference {
        let chart = line_chart(
            &format!("{case}: u_0 minus {}", r.record.label),
            "x",
            "difference",
            &diffs,
        );
        run_dir.write("difference.svg", chart.as_bytes())?;
    }
    run_dir.finish()?;
    Ok(rows)
}
