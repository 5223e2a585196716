use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"{
  "data": { "height": 16, "width": 16, "n_frames": 2, "n_sequences": 8, "fractions": [0.5, 0.25, 0.25], "seed": 2 },
  "trajectory": { "n_shots": 2, "samples_per_shot": 16 },
  "nufft": { "kind": "direct" },
  "recon": { "base_channels": 2 },
  "train": { "total_epochs": 3, "epochs_per_stage": 1, "batch_size": 2 }
}"#;

fn ktraj(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ktraj"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.json"), TINY).unwrap();
    dir
}

#[test]
fn end_to_end_commands() {
    let dir = setup();
    let d = dir.path();
    let out = ktraj(d, &["--config", "tiny.json", "generate-data"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(ktraj(d, &["--config", "tiny.json", "generate-data"]).status.code(), Some(2));
    assert!(ktraj(d, &["--config", "tiny.json", "generate-data", "--force"]).status.success());

    let out = ktraj(d, &["--config", "tiny.json", "--threads", "1", "train", "--mode", "per-frame", "--freeze", "--resets", "--run-dir", "run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["epochs"], 3);
    assert_eq!(std::fs::read_to_string(d.join("run/log.csv")).unwrap().lines().count(), 4);

    let out = ktraj(d, &["--config", "tiny.json", "evaluate", "--run-dir", "run", "--split", "test"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(metrics["psnr"]["mean"].as_f64().unwrap() > 0.0);
    assert!(ktraj(d, &["--config", "tiny.json", "evaluate", "--gar", "--out", "gar.json"]).status.success());
    assert!(d.join("gar.json").exists());

    let out = ktraj(d, &["plot-data", "--run-dir", "run"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 3);

    let out = ktraj(d, &["--config", "tiny.json", "audit", "run/checkpoints/final.ktrj"]);
    assert!(out.status.success());
    let audit: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(audit["feasible"], true);

    let out = ktraj(d, &["--config", "tiny.json", "train", "--mode", "shared", "--resets", "--run-dir", "shared"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sweep_writes_a_table() {
    let dir = setup();
    let d = dir.path();
    assert!(ktraj(d, &["--config", "tiny.json", "generate-data"]).status.success());
    let out = ktraj(d, &["--config", "tiny.json", "sweep", "--shots", "1,2", "--modes", "shared", "--out", "s.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(d.join("s.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("mode,n_shots,psnr"));
}

#[test]
fn exit_codes() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(ktraj(d, &["--preset", "nope", "generate-data"]).status.code(), Some(2));
    assert_eq!(ktraj(d, &["--set", "bogus.key=1", "generate-data"]).status.code(), Some(2));
    assert_eq!(ktraj(d, &["--set", "data.fractions=[0.5,0.5,0.5]", "generate-data"]).status.code(), Some(2));
    assert!(!d.join("data").exists());
    let out = ktraj(d, &["audit", "missing.ktrj"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.ktrj"));
    assert_eq!(ktraj(d, &["frobnicate"]).status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_ktraj"))
        .current_dir(d)
        .env("KTRAJ__TRAIN__BATCH_SIZE", "0")
        .args(["generate-data"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
