use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spordinal"))
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "command failed: {args:?}");
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small synthetic population: returns (data.csv, schema.toml).
fn synth(dir: &Path, n: &str, lhu: &str) -> (PathBuf, PathBuf) {
    let out = dir.join("synth");
    ok(&["synth", "--out", s(&out), "--n", n, "--lhu", lhu, "--seed", "7"]);
    (out.join("data.csv"), out.join("schema.toml"))
}

/// Data lines of a CSV, skipping `#` comments and the header.
fn data_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(str::to_string)
        .collect()
}

#[test]
fn synth_fit_rotate_pipeline() {
    let dir = TempDir::new().unwrap();
    let (data, schema) = synth(dir.path(), "600", "5");
    let fit_dir = dir.path().join("fit");
    ok(&["fit", "--data", s(&data), "--schema", s(&schema), "--lambda", "1e-3", "--out", s(&fit_dir)]);
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(fit_dir.join("fit.json")).unwrap()).unwrap();
    let n_columns = doc["columns"].as_array().unwrap().len();
    assert!(doc["manifest"]["config_hash"].is_string());

    let rot = dir.path().join("rot");
    ok(&["rotate", "--fit", s(&fit_dir.join("fit.json")), "--out", s(&rot)]);
    assert_eq!(data_lines(&rot.join("rotation.csv")).len(), n_columns);

    let rep = dir.path().join("rep");
    ok(&["report", "--in", s(&rot.join("rotation.csv")), "--kind", "lhu-ranking", "--out", s(&rep)]);
    let text = std::fs::read_to_string(rep.join("lhu-ranking.csv")).unwrap();
    assert!(text.contains("# bands: none"));
    assert_eq!(data_lines(&rep.join("lhu-ranking.csv")).len(), 2 * 5);
    for kind in ["plane", "covariate-ranking"] {
        ok(&["report", "--in", s(&rot.join("rotation.csv")), "--kind", kind, "--out", s(&rep)]);
    }
    for kind in ["proportions", "quartiles"] {
        ok(&["report", "--in", s(&data), "--schema", s(&schema), "--kind", kind, "--out", s(&rep)]);
    }
    assert_eq!(data_lines(&rep.join("proportions.csv")).len(), 3 * 3);
}

#[test]
fn bootstrap_bands_reach_the_rankings() {
    let dir = TempDir::new().unwrap();
    let (data, schema) = synth(dir.path(), "400", "4");
    let common = ["--data", s(&data), "--schema", s(&schema), "--lambda", "1e-3"];
    let fit_dir = dir.path().join("fit");
    ok(&[&["fit", "--out", s(&fit_dir)][..], &common].concat());
    let boot = dir.path().join("boot");
    ok(&[&["bootstrap", "--replicates", "25", "--seed", "3", "--out", s(&boot)][..], &common].concat());
    for f in ["ensemble.json", "intervals.csv", "decomposition.csv", "bootstrap.manifest.json"] {
        assert!(boot.join(f).exists(), "{f}");
    }
    let rot = dir.path().join("rot");
    let fit_json = fit_dir.join("fit.json");
    let ensemble = boot.join("ensemble.json");
    ok(&["rotate", "--fit", s(&fit_json), "--ensemble", s(&ensemble), "--out", s(&rot)]);
    let rep = dir.path().join("rep");
    ok(&["report", "--in", s(&rot.join("rotation.csv")), "--kind", "lhu-ranking", "--out", s(&rep)]);
    let text = std::fs::read_to_string(rep.join("lhu-ranking.csv")).unwrap();
    assert!(text.contains("axis,rank,label,region,value,lower,upper"));

    // An ensemble without replicates gives a table without bands.
    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&ensemble).unwrap()).unwrap();
    doc["ensemble"]["replicates"] = serde_json::json!([]);
    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, doc.to_string()).unwrap();
    ok(&["rotate", "--fit", s(&fit_json), "--ensemble", s(&empty), "--out", s(&rot)]);
    ok(&["report", "--in", s(&rot.join("rotation.csv")), "--kind", "lhu-ranking", "--out", s(&rep)]);
    let text = std::fs::read_to_string(rep.join("lhu-ranking.csv")).unwrap();
    assert!(text.contains("# bands: none") && !text.contains(",lower,upper"));
}

#[test]
fn cv_default_family_has_eight_rows() {
    let dir = TempDir::new().unwrap();
    let (data, schema) = synth(dir.path(), "500", "4");
    let out = dir.path().join("cv");
    ok(&["cv", "--data", s(&data), "--schema", s(&schema), "--folds", "3", "--lambda", "1e-3", "--out", s(&out)]);
    let rows = data_lines(&out.join("cv_summary.csv"));
    assert_eq!(rows.len(), 8);
    assert!(rows[0].starts_with("Marginal mean"));
    assert_eq!(data_lines(&out.join("cv_folds.csv")).len(), 8 * 3);

    ok(&["cv", "--data", s(&data), "--schema", s(&schema), "--models", "marginal,parallel", "--out", s(&out)]);
    assert_eq!(data_lines(&out.join("cv_summary.csv")).len(), 2);
}

#[test]
fn grid_defaults_evaluate_49_points() {
    let dir = TempDir::new().unwrap();
    let (data, schema) = synth(dir.path(), "300", "3");
    let out = dir.path().join("grid");
    ok(&["grid", "--data", s(&data), "--schema", s(&schema), "--folds", "2", "--out", s(&out)]);
    let rows = data_lines(&out.join("grid.csv"));
    assert_eq!(rows.len(), 49);
    assert_eq!(rows.iter().filter(|r| r.ends_with(",true")).count(), 1);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let (data, schema) = synth(dir.path(), "400", "4");
    let first = dir.path().join("a");
    let args = |out: &Path| {
        vec![
            "cv".to_string(),
            "--data".into(),
            s(&data).into(),
            "--schema".into(),
            s(&schema).into(),
            "--folds".into(),
            "3".into(),
            "--models".into(),
            "marginal,lhu-strata,elastic-net".into(),
            "--out".into(),
            s(out).into(),
        ]
    };
    let a: Vec<String> = args(&first);
    ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    let before = std::fs::read(first.join("cv_folds.csv")).unwrap();
    ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(before, std::fs::read(first.join("cv_folds.csv")).unwrap());

    // A different output directory does not change the outputs or the hash.
    let second = dir.path().join("b");
    let b: Vec<String> = args(&second);
    ok(&b.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(before, std::fs::read(second.join("cv_folds.csv")).unwrap());

    let synth_again = dir.path().join("again");
    ok(&["synth", "--out", s(&synth_again), "--n", "400", "--lhu", "4", "--seed", "7"]);
    assert_eq!(std::fs::read(&data).unwrap(), std::fs::read(synth_again.join("data.csv")).unwrap());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# population\nn = 150\nlhu = 2\nseed = 5\n").unwrap();
    let out = dir.path().join("s");
    ok(&["synth", "--config", s(&cfg), "--n", "120", "--out", s(&out)]);
    assert_eq!(data_lines(&out.join("data.csv")).len(), 120);
    let manifest = std::fs::read_to_string(out.join("synth.manifest.json")).unwrap();
    assert!(manifest.contains("\"n\": \"120\"") && manifest.contains("\"seed\": \"5\""));
}

#[test]
fn loader_drops_out_of_scope_codes_and_names_missing_columns() {
    let dir = TempDir::new().unwrap();
    let (data, schema) = synth(dir.path(), "200", "2");
    let mut text = std::fs::read_to_string(&data).unwrap();
    let extra = data_lines(&data)[0].replacen(|c: char| c.is_ascii_digit(), "9", 1);
    text.push_str(&extra);
    text.push('\n');
    let edited = dir.path().join("edited.csv");
    std::fs::write(&edited, &text).unwrap();
    let out = dir.path().join("fit");
    ok(&["fit", "--data", s(&edited), "--schema", s(&schema), "--lambda", "1e-2", "--out", s(&out)]);
    let manifest = std::fs::read_to_string(out.join("fit.manifest.json")).unwrap();
    assert!(manifest.contains("\"rows_dropped\": 1"));

    let header_less = text.replacen(",z1", ",zz", 1);
    std::fs::write(&edited, header_less).unwrap();
    let res = run(&["fit", "--data", s(&edited), "--schema", s(&schema), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("z1"));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x");
    let res = run(&["synth", "--out", s(&out), "--n", "many"]);
    assert_eq!(res.status.code(), Some(2));
    let res = run(&["fit", "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(2));
    let res = run(&["rotate", "--fit", "/nonexistent/fit.json", "--out", s(&out)]);
    assert_ne!(res.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&res.stderr).contains("missing upstream artifact"));
    let res = run(&["unknown-command"]);
    assert_eq!(res.status.code(), Some(2));
}
