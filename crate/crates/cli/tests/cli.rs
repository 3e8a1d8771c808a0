use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fairnet::synthetic::{biased_benchmark, biased_schema};

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("schema.json"), biased_schema().to_json()).unwrap();
        biased_benchmark(300, 1).unwrap().write_csv(dir.path().join("train.csv")).unwrap();
        biased_benchmark(40, 2).unwrap().write_csv(dir.path().join("test.csv")).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_fairnet"))
            .current_dir(self.dir.path())
            .args(args)
            .output()
            .unwrap()
    }

    fn pretrain(&self, out: &str) -> Output {
        self.run(&[
            "pretrain", "--schema", "schema.json", "--data", "train.csv", "--out", out, "--epochs", "30", "--hidden", "8,8",
            "--lr", "1e-2", "--threads", "1", "--seed", "5",
        ])
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn missing_schema_is_a_config_error() {
    let f = Fixture::new();
    let o = f.run(&["verify", "--schema", "nope.json", "--model", "m.json", "--data", "test.csv"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.json"));
}

#[test]
fn pretrain_writes_model_log_and_manifest() {
    let f = Fixture::new();
    let o = f.pretrain("run");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(f.path("run/model.json").exists());
    assert_eq!(read(&f.path("run/pretrain_log.jsonl")).lines().count(), 31);
    let manifest: serde_json::Value = serde_json::from_str(&read(&f.path("run/manifest_pretrain.json"))).unwrap();
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["input_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn pretrain_is_deterministic() {
    let f = Fixture::new();
    assert_eq!(code(&f.pretrain("a")), 0);
    assert_eq!(code(&f.pretrain("b")), 0);
    for name in ["model.json", "pretrain_log.jsonl"] {
        assert_eq!(read(&f.path(&format!("a/{name}"))), read(&f.path(&format!("b/{name}"))));
    }
}

#[test]
fn verify_exit_code_tracks_counterexamples() {
    let f = Fixture::new();
    assert_eq!(code(&f.pretrain("run")), 0);
    let o = f.run(&["verify", "--schema", "schema.json", "--model", "run/model.json", "--data", "test.csv", "--out", "run"]);
    let report: serde_json::Value = serde_json::from_str(&read(&f.path("run/verify_report.json"))).unwrap();
    let rate = report["ce_rate"].as_f64().unwrap();
    assert_eq!(code(&o), if rate > 0.0 { 1 } else { 0 });
    let csv = read(&f.path("run/verify_report.csv"));
    assert_eq!(csv.lines().count(), 41);
    assert!(csv.starts_with("sample_id,"));
}

#[test]
fn counting_and_enumeration_predict_the_same_labels() {
    let f = Fixture::new();
    assert_eq!(code(&f.pretrain("run")), 0);
    let base = ["predict", "--schema", "schema.json", "--model", "run/model.json", "--data", "test.csv", "--no-timing"];
    let o = f.run(&[&base[..], &["--out", "count"]].concat());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = f.run(&[&base[..], &["--out", "enum", "--oracle"]].concat());
    assert_eq!(code(&o), 0);
    assert_eq!(read(&f.path("count/predictions.csv")), read(&f.path("enum/predictions.csv")));
}

#[test]
fn enumeration_cap_is_a_config_error() {
    let f = Fixture::new();
    assert_eq!(code(&f.pretrain("run")), 0);
    let o = f.run(&[
        "predict", "--schema", "schema.json", "--model", "run/model.json", "--data", "test.csv", "--oracle", "--max-solutions", "1",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn zero_epoch_retraining_is_rejected() {
    let f = Fixture::new();
    assert_eq!(code(&f.pretrain("run")), 0);
    let o = f.run(&["train", "--schema", "schema.json", "--model", "run/model.json", "--data", "train.csv", "--epochs", "0"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn train_then_audit_produces_four_rows() {
    let f = Fixture::new();
    assert_eq!(code(&f.pretrain("run")), 0);
    let o = f.run(&[
        "train", "--schema", "schema.json", "--model", "run/model.json", "--data", "train.csv", "--out", "run", "--epochs", "2",
        "--hidden", "8,8",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(f.path("run/checkpoints/epoch_001.json").exists());
    assert!(f.path("run/checkpoints/epoch_002.json").exists());
    assert_eq!(read(&f.path("run/trajectory.jsonl")).lines().count(), 2);
    let o = f.run(&[
        "audit", "--schema", "schema.json", "--model", "run/model.json", "--retrained", "run/model_fair.json", "--data", "test.csv",
        "--out", "run",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = read(&f.path("run/audit_table.csv"));
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for r in [rows[1], rows[3]] {
        let cells: Vec<&str> = r.split(',').collect();
        assert_eq!(cells[3], "0");
        assert_eq!(cells[4], "0");
    }
}
