use std::path::Path;
use std::process::{Command, Output};

use rrpsr_core::dataset::read_dataset;
use rrpsr_core::eval::PhaseMap;

fn rrpsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rrpsr"))
        .args(args)
        .env_remove("RRPSR_WORKERS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = rrpsr(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn csv_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

const TINY_RADAR: &str = r#"{"radar": {"n_samples": 8, "oversample": 4}}"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn fft_on_bundled_fixture_peaks_at_bin_256() {
    let rows = csv_rows(&ok(&["infer", "--estimator", "fft", "--fixture"]));
    assert_eq!(rows.len(), 1024);
    let best = rows.iter().max_by(|a, b| a[1].total_cmp(&b[1])).unwrap();
    assert_eq!(best[0], 256.0);
    assert!((best[1] - 64.0).abs() < 1e-9);
}

#[test]
fn inline_scene_and_echo_file_agree() {
    let dir = tempfile::tempdir().unwrap();
    // A unit target at u = 0.25 is (-j)^n.
    let samples: Vec<String> = (0..64)
        .map(|n| match n % 4 {
            0 => "[1,0]",
            1 => "[0,-1]",
            2 => "[-1,0]",
            _ => "[0,1]",
        }.to_string())
        .collect();
    let echo = write(dir.path(), "echo.json", &format!("{{\"samples\": [{}]}}", samples.join(",")));
    let from_file = ok(&["infer", "--estimator", "omp", "--targets", "1", "--echo", &echo]);
    let inline = ok(&[
        "infer",
        "--estimator",
        "omp",
        "--scene",
        r#"{"targets": [{"amplitude": 1.0, "freq": 0.25, "phase": 0.0}]}"#,
    ]);
    assert_eq!(from_file, inline);
}

#[test]
fn noisy_inference_is_seeded() {
    let a = ok(&["--seed", "4", "infer", "--estimator", "hqs", "--fixture", "--snr-db", "10"]);
    let b = ok(&["--seed", "4", "infer", "--estimator", "hqs", "--fixture", "--snr-db", "10"]);
    let c = ok(&["--seed", "5", "infer", "--estimator", "hqs", "--fixture", "--snr-db", "10"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn usage_errors_exit_1_with_message() {
    for args in [
        &["infer", "--estimator", "esprit", "--fixture"][..],
        &["infer", "--estimator", "dssr", "--fixture"],
        &["infer", "--estimator", "fft"],
        &["phase-map", "--estimator", "fft", "--snr", "5:0:1"],
        &["no-such-command"],
    ] {
        let out = rrpsr(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(!out.stderr.is_empty(), "{args:?}");
    }
    let out = rrpsr(&["infer", "--estimator", "dssr", "--fixture"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--checkpoint"));
}

#[test]
fn invalid_config_reports_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", "{\n  \"hqs\": {\"iterations\": 10,}\n}");
    let out = rrpsr(&["--config", &cfg, "gradcheck"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("c.json:2:"), "{err}");
    let cfg = write(dir.path(), "d.json", "{\"train\": {\"epochz\": 1}}");
    let err = String::from_utf8_lossy(&rrpsr(&["--config", &cfg, "gradcheck"]).stderr).to_string();
    assert!(err.contains("d.json:1:") && err.contains("epochz"), "{err}");
}

#[test]
fn help_lists_every_flag() {
    let top = ok(&["--help"]);
    for s in ["simulate", "train", "infer", "eval", "phase-map", "sweep", "gradcheck", "--seed", "--workers", "--config", "RRPSR_WORKERS"] {
        assert!(top.contains(s), "{s}");
    }
    let infer = ok(&["infer", "--help"]);
    for s in ["--estimator", "--checkpoint", "--echo", "--scene", "--scene-file", "--fixture", "--snr-db", "--targets", "--out"] {
        assert!(infer.contains(s), "{s}");
    }
    let train = ok(&["train", "--help"]);
    for s in ["--dataset", "--out", "--preset", "--arch", "--epochs", "--batch-size", "--learning-rate", "--resume"] {
        assert!(train.contains(s), "{s}");
    }
}

#[test]
fn workers_env_fallback_is_read() {
    let out = Command::new(env!("CARGO_BIN_EXE_rrpsr"))
        .args(["infer", "--estimator", "fft", "--fixture"])
        .env("RRPSR_WORKERS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_is_deterministic_and_matches_config() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    for p in [&a, &b] {
        ok(&["--seed", "7", "simulate", "--items", "300", "--out", p.to_str().unwrap()]);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let data = read_dataset(&a).unwrap();
    assert_eq!((data.header.n, data.header.m, data.header.n_items), (64, 1024, 300));
    assert_eq!(data.header.base_seed, 7);
}

#[test]
fn phase_map_and_sweep_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("map.json");
    let csv = ok(&[
        "phase-map", "--estimator", "fft", "--snr", "0:10:5", "--rho", "0.5:1.0:0.5", "--trials", "4", "--json",
        json.to_str().unwrap(),
    ]);
    assert_eq!(csv_rows(&csv).len(), 6);
    let map: PhaseMap = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(map.rates.len(), 3);
    assert!(map.rates.iter().all(|r| r.len() == 2));

    let sweep = ok(&["sweep", "--estimator", "music", "--vary", "snr", "--values", "0:20:4", "--trials", "10"]);
    assert_eq!(sweep.lines().next(), Some("snr_db,rho_d,amp2,rate"));
    assert_eq!(csv_rows(&sweep).len(), 6);

    let cfg = write(
        dir.path(),
        "s.json",
        r#"{"sweep": {"vary": "amp", "rho_d": 1.2, "snr_db": 20, "values": [0.2, 0.5, 1.0]}, "sweep_trials": 5}"#,
    );
    assert_eq!(csv_rows(&ok(&["--config", &cfg, "sweep", "--estimator", "omp"])).len(), 3);
}

#[test]
fn eval_reports_identical_trials_for_each_estimator() {
    let out = ok(&["eval", "--estimator", "fft,music", "--trials", "20", "--snr-db", "30", "--rho-d", "1.5"]);
    let rows: Vec<serde_json::Value> = serde_json::from_str(&out).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1]["estimator"], "music");
    assert!(rows[1]["rate"].as_f64().unwrap() > 0.5);
}

#[test]
fn train_emits_checkpoint_usable_by_infer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.json", TINY_RADAR);
    let data = dir.path().join("d.bin");
    let ckpt_dir = dir.path().join("run");
    ok(&["--config", &cfg, "--seed", "2", "simulate", "--items", "64", "--out", data.to_str().unwrap()]);
    let summary = ok(&[
        "--config", &cfg, "--seed", "3", "train", "--arch", "tiny", "--dataset", data.to_str().unwrap(), "--out",
        ckpt_dir.to_str().unwrap(), "--epochs", "2", "--batch-size", "16", "--probe-trials", "10",
    ]);
    let summary: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(summary["steps"], 8);
    let ckpt = summary["checkpoint"].as_str().unwrap().to_string();
    let scene = r#"{"targets": [{"amplitude": 1.0, "freq": 0.3, "phase": 0.0}]}"#;
    let rows = csv_rows(&ok(&["--config", &cfg, "infer", "--estimator", "dssr", "--checkpoint", &ckpt, "--scene", scene]));
    assert_eq!(rows.len(), 32);
    assert!(rows.iter().all(|r| r[1] >= 0.0 && r[1].is_finite()));

    // Architecture mismatch with the default radar is a usage error.
    assert_eq!(rrpsr(&["infer", "--estimator", "dssr", "--checkpoint", &ckpt, "--fixture"]).status.code(), Some(1));

    let mut bytes = std::fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, bytes).unwrap();
    let out = rrpsr(&["--config", &cfg, "infer", "--estimator", "dssr", "--checkpoint", bad.to_str().unwrap(), "--scene", scene]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));
}

#[test]
fn gradcheck_command_passes() {
    let out = ok(&["gradcheck"]);
    assert!(out.lines().count() >= 14);
    assert!(out.lines().all(|l| l.ends_with("ok")), "{out}");
}
