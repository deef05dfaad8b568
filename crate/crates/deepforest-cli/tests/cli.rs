//! End-to-end checks of the command-line binary.

use std::path::Path;
use std::process::{Command, Output};

use deepforest::model_io::save_cascade;
use deepforest::{demo, CalibrationMethod};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_deepforest"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn usage_error_exits_1() {
    let out = run(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn help_exits_0() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn data_error_exits_2() {
    let out = run(&[
        "train",
        "--input",
        "/nonexistent/data.csv",
        "--out",
        "/tmp/never.json",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn synth_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("linear.csv");
    let out = run(&[
        "synth",
        "--generator",
        "linear",
        "--n",
        "50",
        "--k",
        "3",
        "--seed",
        "7",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = std::fs::read_to_string(&out_path).unwrap();
    assert!(csv.starts_with("x1,x2,x3,label\n"));
    assert_eq!(csv.lines().count(), 51);
    let sidecar = std::fs::read_to_string(dir.path().join("linear.relevance.csv")).unwrap();
    assert!(sidecar.contains("0,x1,true"));
}

#[test]
fn train_is_deterministic_and_explains_own_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let out = run(&[
        "synth",
        "--generator",
        "sincos",
        "--n",
        "120",
        "--seed",
        "3",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let model_a = dir.path().join("a.json");
    let model_b = dir.path().join("b.json");
    for model in [&model_a, &model_b] {
        let out = run(&[
            "train",
            "--input",
            data.to_str().unwrap(),
            "--label-column",
            "label",
            "--task",
            "regression",
            "--seed",
            "11",
            "--trees",
            "4",
            "--depth",
            "3",
            "--max-layers",
            "2",
            "--out",
            model.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        assert!(stdout(&out).contains("layer 1: validation metric"));
    }
    let a = std::fs::read(&model_a).unwrap();
    let b = std::fs::read(&model_b).unwrap();
    assert_eq!(a, b, "same seed must give identical model files");

    let explained = run(&[
        "explain",
        "--model",
        model_a.to_str().unwrap(),
        "--input",
        data.to_str().unwrap(),
    ]);
    assert_eq!(explained.status.code(), Some(0), "{}", stderr(&explained));
    let table = stdout(&explained);
    assert!(table.starts_with("instance,feature,name,class,value\n"));
    assert!(table.contains(",bias,"));
    assert!(table.contains(",prediction,"));

    let importance = run(&[
        "importance",
        "--model",
        model_a.to_str().unwrap(),
        "--input",
        data.to_str().unwrap(),
        "--label-column",
        "label",
        "--method",
        "mdi",
        "--format",
        "json",
    ]);
    assert_eq!(importance.status.code(), Some(0), "{}", stderr(&importance));
    assert!(stdout(&importance).contains("\"name\": \"x1\""));
}

fn save_oracle(dir: &Path) -> std::path::PathBuf {
    let (model, _) = demo::two_layer_model(CalibrationMethod::default()).unwrap();
    let path = dir.join("oracle.json");
    save_cascade(&model, &path).unwrap();
    path
}

#[test]
fn explain_reproduces_oracle_values() {
    let dir = tempfile::tempdir().unwrap();
    let model = save_oracle(dir.path());
    let instances = dir.path().join("points.csv");
    std::fs::write(&instances, "x1,x2\n0,0\n0,1\n1,0\n1,1\n").unwrap();

    let out = run(&[
        "explain",
        "--model",
        model.to_str().unwrap(),
        "--input",
        instances.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let table = stdout(&out);

    // instance 0 = (0,0): bias 1.5, x1 -> -1, x2 -> -0.5, prediction 0.
    let expect = |instance: usize, name: &str, value: f64| {
        let found = table.lines().any(|line| {
            let cells: Vec<&str> = line.split(',').collect();
            cells.len() == 5
                && cells[0] == instance.to_string()
                && cells[2] == name
                && cells[4].parse::<f64>().map(f64::to_bits) == Ok(value.to_bits())
        });
        assert!(found, "missing {instance}/{name}={value} in:\n{table}");
    };
    expect(0, "bias", 1.5);
    expect(0, "x1", -1.0);
    expect(0, "x2", -0.5);
    expect(0, "prediction", 0.0);
    expect(1, "x1", -1.0);
    expect(1, "x2", 0.5);
    expect(1, "prediction", 1.0);
    expect(3, "x1", 1.0);
    expect(3, "x2", 0.5);
    expect(3, "prediction", 3.0);
}

#[test]
fn explain_empty_instances_is_ok() {
    let dir = tempfile::tempdir().unwrap();
    let model = save_oracle(dir.path());
    let instances = dir.path().join("empty.csv");
    std::fs::write(&instances, "x1,x2\n").unwrap();
    let out = run(&[
        "explain",
        "--model",
        model.to_str().unwrap(),
        "--input",
        instances.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(stdout(&out), "instance,feature,name,class,value\n");
}

#[test]
fn explain_schema_mismatch_names_columns() {
    let dir = tempfile::tempdir().unwrap();
    let model = save_oracle(dir.path());
    let instances = dir.path().join("bad.csv");
    std::fs::write(&instances, "x1,other\n0,0\n").unwrap();
    let out = run(&[
        "explain",
        "--model",
        model.to_str().unwrap(),
        "--input",
        instances.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("x2"), "{}", stderr(&out));
}

#[test]
fn explain_calibration_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let model = save_oracle(dir.path()); // partial_additive
    let instances = dir.path().join("points.csv");
    std::fs::write(&instances, "x1,x2\n0,0\n").unwrap();
    let out = run(&[
        "explain",
        "--model",
        model.to_str().unwrap(),
        "--input",
        instances.to_str().unwrap(),
        "--calibration",
        "multiplicative",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("partial_additive"));
}

#[test]
fn importance_oracle_values_and_normalization() {
    let dir = tempfile::tempdir().unwrap();
    let model = save_oracle(dir.path());
    let data = dir.path().join("train.csv");
    std::fs::write(&data, "x1,x2,label\n0,0,0\n0,1,1\n1,0,2\n1,1,3\n").unwrap();

    let out = run(&[
        "importance",
        "--model",
        model.to_str().unwrap(),
        "--input",
        data.to_str().unwrap(),
        "--label-column",
        "label",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let table = stdout(&out);
    assert!(table.contains("0,x1,,1\n"), "{table}");
    assert!(table.contains("1,x2,,0.25\n"), "{table}");

    // Total response variance is 1.25, so normalized importances are 0.8, 0.2.
    let normalized = run(&[
        "importance",
        "--model",
        model.to_str().unwrap(),
        "--input",
        data.to_str().unwrap(),
        "--label-column",
        "label",
        "--normalize",
    ]);
    assert_eq!(normalized.status.code(), Some(0));
    let table = stdout(&normalized);
    assert!(table.contains("0,x1,,0.8\n"), "{table}");
    assert!(table.contains("1,x2,,0.2\n"), "{table}");
}

#[test]
fn normalize_with_zero_variance_fails() {
    let dir = tempfile::tempdir().unwrap();
    let model = save_oracle(dir.path());
    let data = dir.path().join("flat.csv");
    std::fs::write(&data, "x1,x2,label\n0,0,1\n0,1,1\n1,0,1\n1,1,1\n").unwrap();
    let out = run(&[
        "importance",
        "--model",
        model.to_str().unwrap(),
        "--input",
        data.to_str().unwrap(),
        "--label-column",
        "label",
        "--normalize",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("variance"));
}

#[test]
fn benchmark_writes_results_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{
            "name": "micro",
            "source": {"kind": "linear", "n_train": 40, "n_valid": 40, "k": 3},
            "methods": [{"method": "mdi_rf"}],
            "n_runs": 1,
            "base_seed": 5,
            "permute_copy": true,
            "rf": {"n_trees": 4, "max_depth": 3}
        }"#,
    )
    .unwrap();
    let out_dir = dir.path().join("results");
    let out = run(&[
        "benchmark",
        "--spec",
        spec.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let results = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert!(results.starts_with("dataset,method,run,seed,metric,value,train_ms,importance_ms\n"));
    assert!(results.contains("micro,mdi(rf),0,"));
    let summary = std::fs::read_to_string(out_dir.join("summary.json")).unwrap();
    assert!(summary.contains("\"method\": \"mdi(rf)\""));
}
