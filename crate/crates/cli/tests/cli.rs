use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndarray::Array2;
use serde_json::Value;
use sha2::{Digest, Sha256};
use sobl::ordinal_weights::two_step_weights;
use sobl::pipeline::{fit_model, predict, FitOptions, FittedClassifier};
use sobl::simbench::{example1_model, generate_dataset, population_basis, toy35_model};
use sobl::{LabeledDataset, MethodVariant};
use tempfile::TempDir;

fn sobl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sobl")).args(args).output().expect("run sobl")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_csv(path: &Path, data: &LabeledDataset) {
    let mut out = String::from("label");
    for j in 0..data.p() {
        out.push_str(&format!(",x{}", j + 1));
    }
    out.push('\n');
    for (i, row) in data.x().rows().into_iter().enumerate() {
        out.push_str(&data.y()[i].to_string());
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out).unwrap();
}

fn dataset(dir: &TempDir, name: &str, data: &LabeledDataset) -> PathBuf {
    let path = dir.path().join(name);
    write_csv(&path, data);
    path
}

fn read_matrix(path: &Path) -> Array2<f64> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let rows: Vec<Vec<f64>> = reader
        .records()
        .map(|r| r.unwrap().iter().skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    let c = rows[0].len();
    Array2::from_shape_vec((rows.len(), c), rows.concat()).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn assert_error_line(out: &Output, code: i32) {
    assert_eq!(out.status.code(), Some(code), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().unwrap();
    let v: Value = serde_json::from_str(last).unwrap();
    assert_eq!(v["code"], code);
    assert!(v["message"].as_str().is_some());
}

#[test]
fn fit_near_zero_lambda_recovers_population_basis() {
    let dir = TempDir::new().unwrap();
    let model = example1_model();
    let data = generate_dataset(&model, &[20_000; 3], 1).unwrap();
    let csv = dataset(&dir, "ex1.csv", &data);
    let out = dir.path().join("fit");
    let o = sobl(&[
        "fit", "--data", s(&csv), "--variant", "msda", "--weights", "none", "--lambda", "1e-8", "--eta", "1", "--ridge",
        "0", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let z = read_matrix(&out.join("basis.csv"));
    let psi = population_basis(&model, MethodVariant::Msda).unwrap();
    // sampling error of Σ̂⁻¹M̂ at 20000 per class is a few hundredths
    let err = (&z - &psi).iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    assert!(err < 0.15, "max error {err}");
    for name in ["basis.csv", "active_set.csv", "weights.csv", "model.json", "manifest.json", "estimate.json"] {
        assert!(out.join(name).exists(), "{name}");
    }
}

#[test]
fn basis_csv_round_trips_library_fit_bitwise() {
    let dir = TempDir::new().unwrap();
    let data = generate_dataset(&example1_model(), &[30, 30, 30], 4).unwrap();
    let csv = dataset(&dir, "d.csv", &data);
    let out = dir.path().join("fit");
    let o = sobl(&["fit", "--data", s(&csv), "--lambda", "0.05", "--eta", "3", "--out", s(&out)]);
    assert!(o.status.success());
    let w = two_step_weights(&data, true).unwrap();
    let lib = fit_model(&data, MethodVariant::Mgsda, &w, 0.05, 3.0, &FitOptions::default()).unwrap();
    let z = read_matrix(&out.join("basis.csv"));
    assert_eq!(z.shape(), lib.estimate.z.shape());
    for (a, b) in z.iter().zip(lib.estimate.z.iter()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn lambda_above_max_gives_empty_active_set() {
    let dir = TempDir::new().unwrap();
    let data = generate_dataset(&example1_model(), &[15, 15, 15], 2).unwrap();
    let csv = dataset(&dir, "d.csv", &data);
    let out = dir.path().join("fit");
    let o = sobl(&["fit", "--data", s(&csv), "--lambda", "1e6", "--out", s(&out)]);
    assert!(o.status.success());
    let active = std::fs::read_to_string(out.join("active_set.csv")).unwrap();
    assert_eq!(active.trim(), "index,variable");
    assert!(read_matrix(&out.join("basis.csv")).iter().all(|&v| v == 0.0));
}

#[test]
fn input_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let data = generate_dataset(&example1_model(), &[10, 10, 10], 3).unwrap();
    let csv = dataset(&dir, "d.csv", &data);
    let out = dir.path().join("o");
    assert_error_line(&sobl(&["fit", "--data", s(&csv), "--label-col", "y", "--lambda", "1", "--out", s(&out)]), 2);
    assert_error_line(&sobl(&["fit", "--data", s(&csv), "--lambda", "abc", "--out", s(&out)]), 2);
    assert_error_line(&sobl(&["fit", "--data", "/nonexistent.csv", "--lambda", "1", "--out", s(&out)]), 2);
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "label,a\n1,0.5\n2,oops\n").unwrap();
    assert_error_line(&sobl(&["weights", "--data", s(&bad), "--out", s(&out)]), 2);
    std::fs::write(&bad, "label,a\n1,0.5\n4,1\n").unwrap();
    assert_error_line(&sobl(&["weights", "--data", s(&bad), "--out", s(&out)]), 2);
}

#[test]
fn coincident_class_means_exit_3() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("flat.csv");
    let mut text = String::from("label,a,b\n");
    for g in 1..=3 {
        text.push_str(&format!("{g},0,1\n{g},1,0\n{g},2,2\n"));
    }
    std::fs::write(&bad, text).unwrap();
    let out = dir.path().join("t");
    assert_error_line(&sobl(&["tune", "--data", s(&bad), "--folds", "2", "--out", s(&out)]), 3);
}

#[test]
fn predict_on_separable_training_data_is_perfect() {
    let dir = TempDir::new().unwrap();
    let y: Vec<usize> = (0..30).map(|i| 1 + i / 10).collect();
    let x = Array2::from_shape_fn((30, 3), |(i, j)| if j == 0 { 10.0 * y[i] as f64 + (i % 10) as f64 * 0.1 } else { ((i * 7 + j) % 5) as f64 });
    let data = LabeledDataset::new(x, y).unwrap();
    let csv = dataset(&dir, "sep.csv", &data);
    let out = dir.path().join("fit");
    assert!(sobl(&["fit", "--data", s(&csv), "--lambda", "0.01", "--weights", "none", "--out", s(&out)]).status.success());
    let pred = dir.path().join("pred.csv");
    let o = sobl(&["predict", "--model", s(&out.join("model.json")), "--data", s(&csv), "--truth", "label", "--out", s(&pred)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let losses = json(&dir.path().join("pred.losses.json"));
    assert_eq!(losses["l0"], 0.0);
    assert!(dir.path().join("pred.manifest.json").exists());
}

#[test]
fn model_json_round_trip_preserves_predictions() {
    let dir = TempDir::new().unwrap();
    let model = example1_model();
    let train = generate_dataset(&model, &[25, 25, 25], 5).unwrap();
    let test = generate_dataset(&model, &[200, 200, 200], 6).unwrap();
    let train_csv = dataset(&dir, "train.csv", &train);
    let test_csv = dataset(&dir, "test.csv", &test);
    let out = dir.path().join("fit");
    assert!(sobl(&["fit", "--data", s(&train_csv), "--lambda", "0.05", "--standardize", "--out", s(&out)])
        .status
        .success());
    let model_json = json(&out.join("model.json"));
    let classifier: FittedClassifier = serde_json::from_value(model_json["classifier"].clone()).unwrap();
    let again: FittedClassifier = serde_json::from_str(&serde_json::to_string(&classifier).unwrap()).unwrap();
    assert_eq!(classifier, again);

    let pred = dir.path().join("pred.csv");
    assert!(sobl(&["predict", "--model", s(&out.join("model.json")), "--data", s(&test_csv), "--out", s(&pred)])
        .status
        .success());
    let mut reader = csv::Reader::from_path(&pred).unwrap();
    let cli: Vec<usize> = reader.records().map(|r| r.unwrap()[1].parse().unwrap()).collect();
    assert_eq!(cli, predict(&classifier, test.x()).unwrap());
}

#[test]
fn predict_dimension_mismatch_exits_2() {
    let dir = TempDir::new().unwrap();
    let train = generate_dataset(&example1_model(), &[15, 15, 15], 7).unwrap();
    let csv = dataset(&dir, "d.csv", &train);
    let out = dir.path().join("fit");
    assert!(sobl(&["fit", "--data", s(&csv), "--lambda", "0.05", "--out", s(&out)]).status.success());
    let narrow = dataset(&dir, "narrow.csv", &train.select_columns(&[0, 1, 2]));
    let o = sobl(&["predict", "--model", s(&out.join("model.json")), "--data", s(&narrow), "--out", s(&dir.path().join("p.csv"))]);
    assert_error_line(&o, 2);
}

#[test]
fn weights_command_reports_statistics() {
    let dir = TempDir::new().unwrap();
    let model = toy35_model(30).unwrap();
    let data = generate_dataset(&model, &[50; 4], 11).unwrap();
    let csv = dataset(&dir, "toy.csv", &data);
    let out = dir.path().join("w.csv");
    assert!(sobl(&["weights", "--data", s(&csv), "--out", s(&out)]).status.success());
    let lib = two_step_weights(&data, true).unwrap();
    let mut reader = csv::Reader::from_path(&out).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["variable", "weight", "tau_hat", "tau_tilde", "f_pvalue"]
    );
    let w: Vec<f64> = reader.records().map(|r| r.unwrap()[1].parse().unwrap()).collect();
    assert_eq!(w, lib.values().to_vec());
    assert!(w[..5].iter().all(|&v| v == 1.0), "{w:?}");

    let trend = dir.path().join("trend.csv");
    assert!(sobl(&["weights", "--data", s(&csv), "--method", "trend", "--out", s(&trend)]).status.success());
    let header = std::fs::read_to_string(&trend).unwrap();
    assert!(header.lines().next().unwrap().ends_with("p_inc,p_dec"));
}

#[test]
fn constant_column_weight_zero_with_warning() {
    let dir = TempDir::new().unwrap();
    let data = generate_dataset(&example1_model(), &[10, 10, 10], 8).unwrap();
    let mut x = data.x().to_owned();
    x.column_mut(4).fill(2.5);
    let data = LabeledDataset::new(x, data.y().to_vec()).unwrap();
    let csv = dataset(&dir, "c.csv", &data);
    let out = dir.path().join("w.csv");
    let o = sobl(&["weights", "--data", s(&csv), "--method", "kendall", "--out", s(&out)]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("'x5' is constant"));
    let mut reader = csv::Reader::from_path(&out).unwrap();
    let row = reader.records().nth(4).unwrap().unwrap();
    assert_eq!(&row[0], "x5");
    assert_eq!(row[1].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn tune_single_point_grid_and_repeatable_cv_table() {
    let dir = TempDir::new().unwrap();
    let data = generate_dataset(&sobl::simbench::sim53_model(20).unwrap(), &[15, 15, 15], 9).unwrap();
    let csv = dataset(&dir, "d.csv", &data);
    let one = dir.path().join("one");
    let o = sobl(&[
        "tune", "--data", s(&csv), "--mode", "grid", "--lambda-grid", "0.2", "--eta-grid", "1.5", "--out", s(&one),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sel = json(&one.join("tuning.json"));
    assert_eq!(sel["lambda_tilde"], 0.2);
    assert_eq!(sel["eta_tilde"], 1.5);

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        assert!(sobl(&["tune", "--data", s(&csv), "--grid-size", "12", "--seed", "3", "--out", s(out)]).status.success());
    }
    for f in ["cv_table.csv", "basis.csv", "tuning.json", "model.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn manifest_records_input_digest_and_config() {
    let dir = TempDir::new().unwrap();
    let data = generate_dataset(&example1_model(), &[10, 10, 10], 10).unwrap();
    let csv = dataset(&dir, "d.csv", &data);
    let out = dir.path().join("fit");
    assert!(sobl(&["fit", "--data", s(&csv), "--lambda", "0.1", "--out", s(&out)]).status.success());
    let m = json(&out.join("manifest.json"));
    let digest = hex::encode(Sha256::digest(std::fs::read(&csv).unwrap()));
    assert_eq!(m["input_digests"][s(&csv)], digest);
    assert_eq!(m["command"], "fit");
    assert_eq!(m["config"]["lambda"], 0.1);
    assert_eq!(m["tool_version"], env!("CARGO_PKG_VERSION"));
    assert!(m["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn simulate_writes_tables_and_rng_identifier() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sim");
    let o = sobl(&[
        "simulate", "--model", "toy35", "--p", "15", "--reps", "3", "--methods", "ord-fastPOI,MSDA", "--grid-size", "8",
        "--train-per-class", "12", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("method,metric,mean,stderr\n"));
    assert_eq!(summary.lines().count(), 1 + 2 * 8);
    let t2 = std::fs::read_to_string(out.join("table2.csv")).unwrap();
    assert!(t2.lines().next().unwrap().starts_with("method,size_D_mean,size_D_stderr"));
    assert_eq!(std::fs::read_to_string(out.join("replicates.csv")).unwrap().lines().count(), 1 + 3 * 2);
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["rng_algorithm"], sobl::simbench::RNG_ALGORITHM);
    assert_eq!(m["master_seed"], 0);
}

#[test]
fn diagnose_prints_sorted_json() {
    let o = sobl(&["diagnose", "--model", "example1", "--lambda", "0.1", "--eta", "2"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    assert!(v["kappa"].as_f64().unwrap() < 1.0);
    assert_eq!(v["taxonomy"]["j_disc_ord"], serde_json::json!([2, 3]));
    assert!(text.find("\"eps1\"").unwrap() < text.find("\"kappa\"").unwrap());
}

#[test]
fn screening_keeps_model_consistent() {
    let dir = TempDir::new().unwrap();
    let data = generate_dataset(&sobl::simbench::sim53_model(60).unwrap(), &[20, 20, 20], 12).unwrap();
    let csv = dataset(&dir, "d.csv", &data);
    let out = dir.path().join("fit");
    assert!(sobl(&["fit", "--data", s(&csv), "--screen", "10", "--lambda", "0.1", "--out", s(&out)]).status.success());
    assert_eq!(read_matrix(&out.join("basis.csv")).nrows(), 60);
    let model = json(&out.join("model.json"));
    assert_eq!(model["feature_names"].as_array().unwrap().len(), 10);
    let pred = dir.path().join("p.csv");
    assert!(sobl(&["predict", "--model", s(&out.join("model.json")), "--data", s(&csv), "--out", s(&pred)])
        .status
        .success());
}

#[test]
fn threads_flag_and_env_are_accepted() {
    let o = Command::new(env!("CARGO_BIN_EXE_sobl"))
        .args(["diagnose", "--model", "example1", "--lambda", "0.1"])
        .env("SOBL_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_error_line(&sobl(&["--threads", "0", "diagnose", "--model", "example1", "--lambda", "0.1"]), 2);
}
