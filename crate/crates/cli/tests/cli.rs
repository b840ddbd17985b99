use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_trialnli"));
    c.arg("--log").arg("warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, n: usize, seed: u64, prefix: &str) -> PathBuf {
    let out = dir.join(name);
    let n = n.to_string();
    let seed = seed.to_string();
    ok(&["synth", "--n", &n, "--seed", &seed, "--id-prefix", prefix, "--out", p(&out)]);
    out
}

fn train(data: &Path, model: &str, out: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["train", "--model", model, "--train", p(data), "--seed", "3", "--out", p(out)];
    args.extend_from_slice(extra);
    if !extra.contains(&"--epochs") {
        args.extend(["--epochs", "1"]);
    }
    ok(&args);
    out.join("checkpoints.json")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_train_predict_evaluate_round_trip() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let train_set = synth(d, "train.json", 24, 1, "");
    let test_set = synth(d, "test.json", 8, 2, "t");
    let index_a = train(&train_set, "M-512-Bi-Bi-mul", &d.join("a"), &[]);
    let index_b = train(&train_set, "M-512-Bi-Max", &d.join("b"), &[]);
    assert!(d.join("a/run_config.json").exists());
    let resolved = read_json(&d.join("a/run_config.json"));
    assert_eq!(resolved["config"]["model"], "M-512-Bi-Bi-mul");
    assert_eq!(resolved["optim"][0][1]["epochs"], 1);

    let preds = d.join("pred/predictions.json");
    ok(&["predict", "--checkpoints", p(&index_a), p(&index_b), "--data", p(&test_set), "--out", p(&preds)]);
    let file = read_json(&preds);
    assert_eq!(file["taskA"].as_object().unwrap().len(), 8);
    assert_eq!(file["taskB"].as_object().unwrap().len(), 8);
    assert!(d.join("pred/predictions.run.json").exists());

    let report_dir = d.join("report");
    std::fs::create_dir_all(&report_dir).unwrap();
    let table = ok(&["evaluate", "--predictions", p(&preds), "--gold", p(&test_set), "--out", p(&report_dir)]);
    assert!(!table.is_empty());
    let report = read_json(&report_dir.join("report.json"));
    for task in ["taskA", "taskB"] {
        let f1 = report[task]["f1"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&f1), "{task} f1 {f1}");
    }
    assert!(report_dir.join("report.txt").exists());
}

#[test]
fn gold_predictions_score_perfectly() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let data = synth(d, "data.json", 10, 5, "");
    let ds = read_json(&data);
    let instances = ds["instances"].as_array().unwrap();
    let task_a: serde_json::Map<String, Value> = instances
        .iter()
        .map(|i| (i["uuid"].as_str().unwrap().to_string(), serde_json::json!({"label": i["label"], "p": [0.5, 0.5]})))
        .collect();
    let pred = serde_json::json!({
        "taskA": task_a,
        "meta": {"checkpoints": [], "thresholds": {"eta_a": 0.5, "eta_b": 0.5}, "joint": false}
    });
    let path = d.join("gold_pred.json");
    std::fs::write(&path, pred.to_string()).unwrap();
    let out = d.join("rep");
    std::fs::create_dir_all(&out).unwrap();
    ok(&["evaluate", "--predictions", p(&path), "--gold", p(&data), "--out", p(&out)]);
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["taskA"]["f1"].as_f64().unwrap(), 1.0);
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let data = synth(d, "data.json", 4, 0, "");
    let out = d.join("x");
    let bad_model = run(&["train", "--model", "M-9", "--train", p(&data), "--out", p(&out)]);
    assert_eq!(bad_model.status.code(), Some(2));
    let bad_len = run(&["train", "--model", "M-512-Bi-Bi", "--train", p(&data), "--max-len", "700", "--out", p(&out)]);
    assert_eq!(bad_len.status.code(), Some(2));
    assert_eq!(run(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(&["synth"]).status.code(), Some(2));
    let bad_variant = run(&["ablate", "--checkpoints", "x.json", "--variant", "nolabel", "--data", p(&data)]);
    assert_eq!(bad_variant.status.code(), Some(2));
}

#[test]
fn missing_files_exit_with_one() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let missing = d.join("absent.json");
    let out = run(&["train", "--model", "M-512-Bi-Bi", "--train", p(&missing), "--out", p(&d.join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.json"));
    let out = run(&["evaluate", "--predictions", p(&missing), "--gold", p(&missing)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ablation_needs_two_contributors() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let data = synth(d, "data.json", 12, 4, "");
    let index = train(&data, "M-512-Bi-Bi-mul", &d.join("one"), &[]);
    let out = run(&["ablate", "--checkpoints", p(&index), "--data", p(&data)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn ablation_reports_leave_one_out_rows() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let data = synth(d, "data.json", 12, 6, "");
    let a = train(&data, "M-512-Bi-Bi-mul", &d.join("a"), &[]);
    let c = train(&data, "M-512-Tf-Bi-cl", &d.join("c"), &[]);
    let rows_path = d.join("ablation.json");
    let variant = format!("alone={}", p(&a));
    ok(&["ablate", "--checkpoints", p(&a), p(&c), "--variant", &variant, "--data", p(&data), "--out", p(&rows_path)]);
    let rows = read_json(&rows_path);
    let names: Vec<&str> = rows.as_array().unwrap().iter().map(|r| r["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["original", "- M-512-Bi-Bi-mul", "- M-512-Tf-Bi-cl", "alone"]);
    let original = &rows[0];
    assert_eq!(original["contributors"], 2);
    assert_eq!(original["delta_f1"].as_f64().unwrap(), 0.0);
    let alone = &rows[3];
    assert_eq!(alone["contributors"], 1);
    let diff = alone["f1"].as_f64().unwrap() - original["f1"].as_f64().unwrap();
    assert!((alone["delta_f1"].as_f64().unwrap() - diff).abs() < 1e-12);
}

#[test]
fn same_seed_gives_identical_metrics() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let data = synth(d, "data.json", 12, 8, "");
    let reports: Vec<Value> = (0..2)
        .map(|i| {
            let run_dir = d.join(format!("run{i}"));
            let index = train(&data, "M-512-Bi-Max", &run_dir, &["--cv", "2", "--epochs", "2"]);
            let pred = run_dir.join("pred.json");
            ok(&["predict", "--checkpoints", p(&index), "--data", p(&data), "--out", p(&pred)]);
            ok(&["evaluate", "--predictions", p(&pred), "--gold", p(&data), "--out", p(&run_dir)]);
            read_json(&run_dir.join("report.json"))
        })
        .collect();
    assert_eq!(reports[0], reports[1]);
    let index = read_json(&d.join("run0/checkpoints.json"));
    // two folds keep their two best epochs each; without a dev split there is no full-split run
    assert_eq!(index["checkpoints"].as_array().unwrap().len(), 4);
}

#[test]
fn pairgen_writes_four_sequences_per_pair() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let data = synth(d, "data.json", 20, 9, "");
    let out = d.join("pairs.json");
    let stdout = ok(&["pairgen", "--data", p(&data), "--out", p(&out)]);
    assert!(stdout.contains("10 contradicting pairs"), "{stdout}");
    let pairs = read_json(&out);
    assert_eq!(pairs["pairs"].as_array().unwrap().len(), 40);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let data = synth(d, "data.json", 8, 2, "");
    let cfg = d.join("cfg.json");
    let body = serde_json::json!({"model": "M-512-Bi-Bi", "train": data, "epochs": 5, "seed": 1, "output": d.join("from_cfg")});
    std::fs::write(&cfg, body.to_string()).unwrap();
    let out = d.join("from_flags");
    ok(&["train", "--config", p(&cfg), "--epochs", "1", "--out", p(&out)]);
    let resolved = read_json(&out.join("run_config.json"));
    assert_eq!(resolved["config"]["epochs"], 1);
    assert_eq!(resolved["config"]["seed"], 1);
    assert!(!d.join("from_cfg").exists());

    std::fs::write(&cfg, r#"{"modle": "M-512-Bi-Bi"}"#).unwrap();
    assert_eq!(run(&["train", "--config", p(&cfg)]).status.code(), Some(2));
}
