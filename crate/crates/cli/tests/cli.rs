use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fbms(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fbms"))
        .args(args)
        .env_remove("FBMS_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn fixture(dir: &Path, name: &str) -> PathBuf {
    let path = dir.join(format!("{name}.csv"));
    ok(&fbms(&["fixtures", "generate", "--name", name, "--out", p(&path)]));
    path
}

fn rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect()
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

#[test]
fn fit_outputs_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path(), "schwefel1d");
    let model = dir.path().join("model.json");
    let trace = dir.path().join("trace.jsonl");
    let report = dir.path().join("report.csv");
    ok(&fbms(&[
        "fit", "--input", p(&data), "--omega", "10", "--delta", "1e-3", "--output", p(&model), "--trace",
        p(&trace), "--report", p(&report),
    ]));
    let m: Value = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(m["schema_version"], 1);
    let entries = m["entries"].as_array().unwrap().len();
    let text = fs::read_to_string(&trace).unwrap();
    let last: Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(text.lines().count(), 11);
    assert_eq!(last["c_cum"].as_u64().unwrap() as usize, entries);

    // the standalone report reproduces the one written by fit
    let again = dir.path().join("again.csv");
    ok(&fbms(&["report", "--trace", p(&trace), "--output", p(&again)]));
    assert_eq!(fs::read(&report).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn predict_reproduces_training_mse() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path(), "gramacy-lee-noisy");
    let model = dir.path().join("model.json");
    let trace = dir.path().join("trace.jsonl");
    let preds = dir.path().join("preds.csv");
    ok(&fbms(&["fit", "--input", p(&data), "--omega", "8", "--output", p(&model), "--trace", p(&trace)]));
    ok(&fbms(&["predict", "--model", p(&model), "--points", p(&data), "--output", p(&preds)]));

    let m: Value = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    let (y_min, y_max) = (m["norm"]["y_min"].as_f64().unwrap(), m["norm"]["y_max"].as_f64().unwrap());
    let truth = rows(&data);
    let predicted = rows(&preds);
    assert_eq!(truth.len(), predicted.len());
    let n = truth.len() as f64;
    let mse: f64 = truth
        .iter()
        .zip(&predicted)
        .map(|(t, q)| {
            assert_eq!(t[0], q[0]);
            ((t[1] - q[1]) / (y_max - y_min)).powi(2)
        })
        .sum::<f64>()
        / n;
    let text = fs::read_to_string(&trace).unwrap();
    let last: Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    let reported = last["mse_post"].as_f64().unwrap();
    assert!((mse - reported).abs() <= 1e-10, "{mse} vs {reported}");
}

#[test]
fn zero_target_gives_empty_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("zero.csv");
    fs::write(&data, "0,0\n0.25,0\n0.5,0\n1,0\n").unwrap();
    let model = dir.path().join("model.json");
    ok(&fbms(&["fit", "--input", p(&data), "--omega", "4", "--output", p(&model)]));
    let m: Value = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    assert!(m["entries"].as_array().unwrap().is_empty());
}

#[test]
fn missing_input_leaves_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    let out = fbms(&[
        "fit",
        "--input",
        p(&dir.path().join("absent.csv")),
        "--omega",
        "3",
        "--output",
        p(&dir.path().join("model.json")),
        "--trace",
        p(&dir.path().join("trace.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(files_in(dir.path()).is_empty());
}

#[test]
fn max_scale_zero_without_low_entries() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    let doc = serde_json::json!({
        "schema_version": 1,
        "d": 1,
        "omega": 5,
        "T": 0.5,
        "norm": {"x_min": [0.0], "x_max": [1.0], "y_min": 0.0, "y_max": 1.0},
        "entries": [{"x": [0.5], "y": 0.2, "s": 4, "theta": 1.5}],
        "metadata": {"delta": 1e-3, "ref_scale": 15, "eps0": 1e-4, "deletion_mode": "cumulative", "n_train": 2, "generator": "test"}
    });
    fs::write(&model, serde_json::to_string(&doc).unwrap()).unwrap();
    let points = dir.path().join("points.csv");
    fs::write(&points, "0.1\n0.5\n0.9\n").unwrap();
    let preds = dir.path().join("preds.csv");
    ok(&fbms(&["predict", "--model", p(&model), "--points", p(&points), "--max-scale", "0", "--output", p(&preds)]));
    assert!(rows(&preds).iter().all(|r| r[1] == 0.0));
    ok(&fbms(&["predict", "--model", p(&model), "--points", p(&points), "--output", p(&preds)]));
    assert_eq!(rows(&preds)[1][1], 1.5);
}

#[test]
fn malformed_model_and_dimension_errors() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    fs::write(&model, "{\"schema_version\": 1, \"d\": ").unwrap();
    let points = dir.path().join("points.csv");
    fs::write(&points, "0.1,0.2,0.3\n").unwrap();
    let preds = dir.path().join("preds.csv");
    let out = fbms(&["predict", "--model", p(&model), "--points", p(&points), "--output", p(&preds)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!preds.exists());

    let data = fixture(dir.path(), "sine-smooth");
    ok(&fbms(&["fit", "--input", p(&data), "--omega", "2", "--output", p(&model)]));
    let out = fbms(&["predict", "--model", p(&model), "--points", p(&points), "--output", p(&preds)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension mismatch"));
}

#[test]
fn cv_selects_interior_scale_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path(), "gramacy-lee-noisy");
    let run = |name: &str| {
        let csv = dir.path().join(format!("{name}.csv"));
        let json = dir.path().join(format!("{name}.json"));
        let out = fbms(&[
            "cv", "--input", p(&data), "--folds", "2", "--max-scale", "15", "--seed", "3", "--output", p(&csv),
            "--json", p(&json),
        ]);
        ok(&out);
        (fs::read(&csv).unwrap(), fs::read(&json).unwrap())
    };
    let (csv_a, json_a) = run("a");
    let (csv_b, json_b) = run("b");
    assert_eq!(csv_a, csv_b);
    assert_eq!(json_a, json_b);
    let text = String::from_utf8(csv_a).unwrap();
    assert_eq!(text.lines().count(), 17);
    assert!(text.starts_with("s,mean_test_mse,"));
    let doc: Value = serde_json::from_slice(&json_a).unwrap();
    let s = doc["selected_scale"].as_u64().unwrap();
    assert!(s > 0 && s < 15, "selected {s}");
}

#[test]
fn usage_errors_exit_two() {
    let out = fbms(&["cv", "--input", "x.csv", "--output", "y.csv", "--folds", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = fbms(&["fit", "--input", "x.csv", "--output", "m.json"]);
    assert_eq!(out.status.code(), Some(2));
    let out = fbms(&["fixtures", "generate", "--name", "rosenbrock", "--out", "f.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn thread_override() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.csv");
    let bad = Command::new(env!("CARGO_BIN_EXE_fbms"))
        .args(["fixtures", "generate", "--name", "sine-smooth", "--out", p(&path)])
        .env("FBMS_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let good = Command::new(env!("CARGO_BIN_EXE_fbms"))
        .args(["fixtures", "generate", "--name", "sine-smooth", "--n", "30", "--out", p(&path)])
        .env("FBMS_THREADS", "2")
        .output()
        .unwrap();
    ok(&good);
    assert_eq!(rows(&path).len(), 30);
}
