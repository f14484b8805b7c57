use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use regclosure_cli::commands::RunRecord;
use regclosure_cli::report::{read_table, ReportRow};
use regclosure_cli::rundir::{sha256_hex, Manifest};
use serde_json::Value;

const CONFIG: &str = r#"
seed = 11

[sampler]
order = 1
gamma = 0.1
count = 3000

[trainer]
epochs = 100
learning_rate = 0.01
batch_size = 64

[solver]
case = "plane_source"
t_final = 0.2
snapshots = 3

[[solver.closures]]
name = "mn-newton"
order = 1
gamma = 0.1

[[solver.closures]]
name = "mn-network"
order = 1
gamma = 0.1
model = "train"

[[solver.closures]]
name = "pn"
order = 3

[solver.reference]
ordinates = 32
refinement = 2
"#;

fn regclosure(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regclosure"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = regclosure(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn failure(dir: &Path, args: &[&str]) -> Value {
    let out = regclosure(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    err["error"].clone()
}

/// sample -> train -> solve -> report from one config file.
fn pipeline(dir: &Path) {
    fs::write(dir.join("exp.toml"), CONFIG).unwrap();
    ok(dir, &["sample", "--config", "exp.toml", "--out", "sample"]);
    ok(dir, &["train", "--config", "exp.toml", "--data", "sample", "--out", "train"]);
    ok(dir, &["solve", "--config", "exp.toml", "--out", "solve"]);
    ok(dir, &["report", "--config", "exp.toml", "--runs", "solve", "--out", "report"]);
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn full_pipeline_is_deterministic_and_self_consistent() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());

    // numeric artifacts match byte for byte; wall times and digests of
    // files that contain them are the only allowed differences
    let numeric = |p: &Path| {
        let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
        ext == "txt" || p.ends_with("dataset.csv") || p.ends_with("model.json") || p.ends_with("history.csv")
    };
    let fa = files(a.path());
    let fb = files(b.path());
    assert_eq!(fa.len(), fb.len());
    let mut compared = 0;
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.strip_prefix(a.path()).unwrap(), y.strip_prefix(b.path()).unwrap());
        if numeric(x) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
            compared += 1;
        }
    }
    assert!(compared > 10);
    let rows = |d: &Path| -> Vec<ReportRow> {
        serde_json::from_slice(&fs::read(d.join("report/summary.json")).unwrap()).unwrap()
    };
    let (ra, rb) = (rows(a.path()), rows(b.path()));
    for (x, y) in ra.iter().zip(&rb) {
        assert_eq!((x.e_rel, &x.label), (y.e_rel, &y.label));
    }

    // one row per run, and stored e_rel equals the one recomputed from tables
    assert_eq!(ra.len(), 4);
    for r in &ra {
        if r.label.starts_with("reference") {
            assert_eq!(r.e_rel, Some(0.0));
            continue;
        }
        let (got, stored) = (r.e_rel.unwrap(), r.e_rel_reported.unwrap());
        assert!((got - stored).abs() <= 1e-14, "{}: {got} vs {stored}", r.label);
    }

    // every run directory carries a manifest stamped with the config hash
    let config_hash = Manifest::load(&a.path().join("sample")).unwrap().config_hash;
    for d in ["sample", "train", "solve", "report"] {
        let m = Manifest::load(&a.path().join(d)).unwrap();
        assert_eq!(m.config_hash, config_hash);
        assert_eq!(m.versions.regclosure, regclosure::VERSION);
        for art in &m.artifacts {
            let bytes = fs::read(a.path().join(d).join(&art.path)).unwrap();
            assert_eq!(sha256_hex(&bytes), art.sha256, "{d}/{}", art.path);
        }
    }
    let svg = fs::read_to_string(a.path().join("report/density.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 4);
    assert!(a.path().join("report/difference.svg").is_file());
}

#[test]
fn newton_oracle_evaluates_to_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["sample", "--order", "2", "--gamma", "0.01", "--count", "300", "--seed", "4", "--out", "reg"]);
    ok(d, &["sample", "--order", "2", "--gamma", "0", "--count", "300", "--seed", "5", "--out", "plain"]);
    let v = ok(d, &["eval-closure", "--model", "newton", "--data", "reg", "--out", "eval"]);
    for k in ["e_h", "e_beta", "e_u"] {
        assert!(v["errors"][k].as_f64().unwrap() <= 1e-12, "{k}: {v}");
    }
    assert!(v["combined"].is_null());
    assert!(d.join("eval/errors.json").is_file());

    // the oracle at gamma = 0 against gamma = 0 labels is exact too
    let v = ok(d, &["eval-closure", "--model", "newton", "--data", "plain", "--reference", "plain"]);
    assert!(v["combined"]["e_beta"].as_f64().unwrap() <= 1e-12);

    // the reference set must be non-regularized
    let e = failure(d, &["eval-closure", "--model", "newton", "--data", "plain", "--reference", "reg"]);
    assert_eq!(e["kind"], "config");
}

#[test]
fn sample_reruns_are_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = |out: &'static str| {
        vec!["sample", "--order", "3", "--gamma", "0.1", "--count", "500", "--seed", "8", "--workers", "3", "--out", out]
    };
    let v = ok(d, &args("one"));
    ok(d, &args("two"));
    assert_eq!(v["samples"], 500);
    assert!(v["acceptance_rate"].as_f64().unwrap() > 0.0);
    for f in ["dataset.csv", "dataset.csv.meta.json"] {
        assert_eq!(fs::read(d.join("one").join(f)).unwrap(), fs::read(d.join("two").join(f)).unwrap());
    }
}

#[test]
fn solve_writes_snapshots_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let v = ok(
        d,
        &["solve", "--case", "plane_source", "--t-final", "0.5", "--closure", "mn-newton", "--order", "1", "--gamma", "0.01", "--out", "run"],
    );
    assert_eq!(v[0]["label"], "mn-newton-1-g0.01");
    assert!(v[0]["mass_drift"].as_f64().unwrap() < 1e-3);
    let run = d.join("run/runs/mn-newton-1-g0.01");
    let record: RunRecord = serde_json::from_slice(&fs::read(run.join("run.json")).unwrap()).unwrap();
    assert_eq!(record.snapshots.len(), 5);
    assert_eq!(record.system_size, 2);
    let entropy = record.diagnostics.entropy.as_ref().unwrap();
    assert_eq!(entropy.len(), record.diagnostics.steps + 1);
    let last = read_table(&run.join(&record.snapshots[4].file)).unwrap();
    assert!((last.time - 0.5).abs() < 1e-12);
    assert_eq!(last.x.len(), 200);
    assert!(last.u.iter().all(|u| u.len() == 2 && u[0] > 0.0));
}

#[test]
fn identical_runs_overlay_with_zero_difference() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["solve", "--t-final", "0.1", "--closure", "pn", "--order", "1", "--out", "run"]);
    // a second copy of the same run under another label
    let src = d.join("run/runs/pn-1");
    let copy = d.join("copy");
    fs::create_dir(&copy).unwrap();
    for f in fs::read_dir(&src).unwrap() {
        let f = f.unwrap().path();
        fs::copy(&f, copy.join(f.file_name().unwrap())).unwrap();
    }
    let text = fs::read_to_string(copy.join("run.json")).unwrap();
    fs::write(copy.join("run.json"), text.replace("\"pn-1\"", "\"pn-1-copy\"")).unwrap();

    let rows = ok(d, &["report", "--runs", "run/runs/pn-1", "copy", "--reference", "pn-1", "--out", "rep"]);
    assert_eq!(rows.as_array().unwrap().len(), 2);
    for r in rows.as_array().unwrap() {
        assert_eq!(r["e_rel"].as_f64(), Some(0.0));
    }
    let svg = fs::read_to_string(d.join("rep/difference.svg")).unwrap();
    for line in svg.lines().filter(|l| l.starts_with("<polyline")) {
        let points = line.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>");
        let ys: std::collections::BTreeSet<&str> = points.split(' ').map(|p| p.split(',').nth(1).unwrap()).collect();
        assert_eq!(ys.len(), 1, "difference curve is not flat");
    }
}

#[test]
fn report_flags_non_nested_grids() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["solve", "--t-final", "0.1", "--dx", "0.01", "--closure", "pn", "--order", "1", "--out", "a"]);
    ok(d, &["solve", "--t-final", "0.1", "--dx", "0.0125", "--closure", "pn", "--order", "3", "--out", "b"]);
    let rows = ok(d, &["report", "--runs", "a", "b", "--reference", "pn-1", "--out", "rep"]);
    let other = rows.as_array().unwrap().iter().find(|r| r["label"] == "pn-3").unwrap();
    assert!(other["e_rel"].is_null());
    assert!(other["note"].as_str().unwrap().contains("not nested"));
}

#[test]
fn failures_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.toml"), "[solver]\ncolour = \"red\"\n").unwrap();
    let e = failure(d, &["solve", "--config", "bad.toml", "--out", "x"]);
    assert_eq!(e["kind"], "config");
    assert!(e["message"].as_str().unwrap().contains("colour"));
    assert!(!d.join("x").exists());

    let e = failure(d, &["train", "--data", "missing.csv", "--out", "x"]);
    assert_eq!(e["command"], "train");
    assert!(["io", "metadata"].contains(&e["kind"].as_str().unwrap()));

    let e = failure(d, &["solve", "--case", "hohlraum", "--out", "x"]);
    assert_eq!(e["kind"], "config");

    let e = failure(d, &["report", "--runs", "nowhere", "--out", "x"]);
    assert_eq!(e["kind"], "io");
}
