use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pulsenet")).args(args).env_remove("PULSENET_CONFIG").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Small Sim LiDAR set plus a one-epoch model.
fn trained(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    let model = dir.join("model");
    ok(&["gen-sim", "--out", s(&data), "--train", "96", "--test", "64", "--seed", "3"]);
    ok(&["train", "--data", s(&data), "--out", s(&model), "--epochs", "1", "--skip-self-test"]);
    (data, model.join("model.snnm"))
}

#[test]
fn gen_sim_counts_and_seed_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = ok(&["gen-sim", "--out", s(&a), "--seed", "7", "--train", "64", "--test", "32", "--noise", "0.5"]);
    assert!(out.contains("train: 64 samples, 2..2 per class"), "{out}");
    ok(&["gen-sim", "--out", s(&b), "--seed", "7", "--train", "64", "--test", "32", "--noise", "0.5"]);
    let m = json(&a.join("manifest.json"));
    assert_eq!(m["entries"].as_array().unwrap().len(), 96);
    assert_eq!(m["generator"]["config"]["noise_max"], 0.5);
    assert_eq!(std::fs::read(a.join("manifest.json")).unwrap(), std::fs::read(b.join("manifest.json")).unwrap());
    let f = "samples/test/000031.spkt";
    assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
}

#[test]
fn unwritable_output_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain-file");
    std::fs::write(&file, b"x").unwrap();
    let out = run(&["gen-sim", "--out", s(&file.join("sub")), "--train", "32", "--test", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("plain-file"));
}

#[test]
fn config_file_is_validated_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"simlidar": {"train": 32, "test": 32, "noise_max": 0.2, "shift_range": 0.1, "seed": 1}, "oops": 1}"#).unwrap();
    let out = run(&["--config", s(&cfg), "gen-sim", "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("oops"));

    std::fs::write(&cfg, r#"{"simlidar": {"train": 32, "test": 32, "noise_max": 0.2, "shift_range": 0.1, "seed": 1}}"#).unwrap();
    let data = dir.path().join("d");
    let out = Command::new(env!("CARGO_BIN_EXE_pulsenet"))
        .args(["gen-sim", "--out", s(&data), "--test", "0"])
        .env("PULSENET_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(out.status.success());
    let m = json(&data.join("manifest.json"));
    assert_eq!(m["generator"]["config"]["noise_max"], serde_json::json!(0.2f32 as f64));
    assert_eq!(m["entries"].as_array().unwrap().len(), 32);
}

#[test]
fn kitti_ingest_conserves_labels() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    ok(&["gen-kitti", "--out", s(&raw), "--scans", "2", "--seed", "4"]);
    let out = ok(&["ingest", "kitti", "--input", s(&raw), "--out", s(&dir.path().join("ds")), "--test", "2"]);
    assert!(out.contains("scans 2 (skipped 0), crops 8"), "{out}");
    let m = json(&dir.path().join("ds/manifest.json"));
    assert_eq!(m["entries"].as_array().unwrap().len(), 8);
    assert_eq!(m["classes"], 8);

    // A scan without its calibration is skipped and counted.
    std::fs::remove_file(raw.join("calib/000001.txt")).unwrap();
    let out = ok(&["ingest", "kitti", "--input", s(&raw), "--out", s(&dir.path().join("ds2"))]);
    assert!(out.contains("scans 2 (skipped 1), crops 4"), "{out}");
}

#[test]
fn malformed_scan_is_exit_3_with_file_and_offset() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    ok(&["gen-kitti", "--out", s(&raw), "--scans", "1"]);
    let scan = raw.join("velodyne/000000.bin");
    let mut bytes = std::fs::read(&scan).unwrap();
    bytes.truncate(16 * 5 + 3);
    std::fs::write(&scan, bytes).unwrap();
    let out = run(&["ingest", "kitti", "--input", s(&raw), "--out", s(&dir.path().join("ds"))]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("000000.bin") && err.contains("offset 80"), "{err}");
}

#[test]
fn dvs_ingest_one_frame_per_window() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    ok(&["gen-dvs", "--out", s(&raw), "--windows", "3"]);
    let out = ok(&["ingest", "dvs", "--input", s(&raw), "--out", s(&dir.path().join("ds"))]);
    assert!(out.contains("motif00: train 3 test 0"), "{out}");
    let m = json(&dir.path().join("ds/manifest.json"));
    assert_eq!(m["entries"].as_array().unwrap().len(), 36 * 3);
    let frame = dir.path().join("ds").join(m["entries"][0]["path"].as_str().unwrap());
    let bytes = std::fs::read(frame).unwrap();
    assert_eq!(&bytes[8..16], &[32, 0, 0, 0, 32, 0, 0, 0]);
}

#[test]
fn train_writes_log_checkpoint_and_resolved_preset() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ckpt) = trained(dir.path());
    let model = ckpt.parent().unwrap();
    let run = json(&model.join("run.json"));
    assert_eq!(run["train"]["optimizer"], "sgd");
    assert_eq!(run["train"]["learning_rate"], 0.01);
    assert_eq!(run["train"]["batch_size"], 60);
    assert_eq!(run["model"]["layers"][1]["units"], 32);
    assert_eq!(run["train"]["max_grad_norm"], 10.0);
    let log = std::fs::read_to_string(model.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
    assert!(model.join("checkpoint.snnm").exists());
}

#[test]
fn eval_energy_scales_with_alpha_and_echoes_rate() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ckpt) = trained(dir.path());
    let (lo, hi) = (dir.path().join("lo"), dir.path().join("hi"));
    ok(&["eval", "--data", s(&data), "--checkpoint", s(&ckpt), "--out", s(&lo), "--alpha", "0.37e-12", "--rate", "2.2e6"]);
    ok(&["eval", "--data", s(&data), "--checkpoint", s(&ckpt), "--out", s(&hi), "--alpha", "45e-12", "--rate", "2.2e6"]);
    let (a, b) = (json(&lo.join("report.json")), json(&hi.join("report.json")));
    assert_eq!(a["rate"]["points_per_second"], 2.2e6);
    let ratio = b["summary"]["mean_energy_j"].as_f64().unwrap() / a["summary"]["mean_energy_j"].as_f64().unwrap();
    assert!((ratio / (45.0 / 0.37) - 1.0).abs() < 1e-12, "{ratio}");
    for f in ["samples.csv", "hist_consumed.csv", "hist_t_rec.csv"] {
        assert!(lo.join(f).exists());
    }
    let csv = std::fs::read_to_string(lo.join("samples.csv")).unwrap();
    assert_eq!(csv.lines().count(), 65);
}

#[test]
fn eval_shape_mismatch_is_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ckpt) = trained(dir.path());
    let raw = dir.path().join("raw");
    ok(&["gen-dvs", "--out", s(&raw), "--windows", "1"]);
    ok(&["ingest", "dvs", "--input", s(&raw), "--out", s(&dir.path().join("dvs")), "--test", "36"]);
    let out = run(&["eval", "--data", s(&dir.path().join("dvs")), "--checkpoint", s(&ckpt), "--out", s(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn predict_and_render_single_frame() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ckpt) = trained(dir.path());
    let frame = data.join("samples/test/000000.spkt");
    let out = ok(&["predict", "--checkpoint", s(&ckpt), s(&frame), "--rate", "1e6"]);
    let v: Value = serde_json::from_str(out.trim()).unwrap();
    let consumed = v["consumed_spikes"].as_u64().unwrap();
    assert_eq!(v["t_rec_s"].as_f64().unwrap(), consumed as f64 / 1e6);
    assert!(consumed <= v["total_input_spikes"].as_u64().unwrap());

    let pgm = dir.path().join("f.pgm");
    ok(&["render", s(&frame), s(&pgm)]);
    let bytes = std::fs::read(&pgm).unwrap();
    assert!(bytes.starts_with(b"P5\n16 16\n255\n"));
    assert_eq!(bytes.len(), 13 + 256);
}

#[test]
fn missing_spkt_frame_and_corrupt_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ckpt) = trained(dir.path());
    let out = run(&["predict", "--checkpoint", s(&ckpt), s(&dir.path().join("nope.spkt"))]);
    assert_eq!(out.status.code(), Some(2));
    let bad = dir.path().join("bad.snnm");
    std::fs::write(&bad, b"SNNMxx").unwrap();
    let out = run(&["predict", "--checkpoint", s(&bad), s(&dir.path().join("nope.spkt"))]);
    assert_eq!(out.status.code(), Some(3));
}
