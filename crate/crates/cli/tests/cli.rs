use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn riccilab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riccilab"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

const FLAT: &str = r#"{
  "schema_version": 1,
  "dimension": 2,
  "grid_size": 16,
  "initial_metric": { "kind": "flat" },
  "flow": { "t_end": 0.3, "sample_interval": 0.05 },
  "conjugate": { "s_list": [0.15, 0.3], "schedule": [0.15, 0.3] },
  "spectral": { "k_max": 3 }
}"#;

const PERTURBED: &str = r#"{
  "schema_version": 1,
  "dimension": 2,
  "grid_size": 16,
  "initial_metric": { "kind": "random_fourier", "amplitude": 0.05, "seed": 3 },
  "flow": { "t_end": 0.45, "dt": 0.002, "checkpoint_stride": 10 },
  "conjugate": { "s_list": [0.2, 0.4], "schedule": [0.2, 0.3, 0.4] },
  "spectral": { "k_max": 3 }
}"#;

fn csv_column(path: &Path, name: &str) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == name).unwrap_or_else(|| panic!("no column {name}"));
    lines.map(|l| l.split(',').nth(i).unwrap().to_string()).collect()
}

#[test]
fn flat_run_is_stationary_with_zero_functionals() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "flat.json", FLAT);
    let out = riccilab(&["run-flow", "--config", cfg.to_str().unwrap(), "--run-dir", "run"], tmp.path());
    assert!(out.status.success(), "{out:?}");
    let manifest: Value = serde_json::from_slice(&fs::read(tmp.path().join("run/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["summary"]["stationary"], Value::Bool(true));
    assert!(manifest["artifacts"].as_array().unwrap().iter().any(|a| a == "curvature.csv"));

    let out = riccilab(&["functionals", "--run-dir", "run"], tmp.path());
    assert!(out.status.success(), "{out:?}");
    let csv = tmp.path().join("run/functionals.csv");
    for col in ["lambda", "lambda_dyn_s_0.15", "lambda_dyn_s_0.3", "lambda_dyn_inf"] {
        for v in csv_column(&csv, col).iter().filter(|v| !v.is_empty()) {
            assert!(v.parse::<f64>().unwrap().abs() <= 1e-12, "{col} = {v}");
        }
    }
    let manifest: Value = serde_json::from_slice(&fs::read(tmp.path().join("run/manifest.json")).unwrap()).unwrap();
    let artifacts = manifest["artifacts"].as_array().unwrap();
    assert!(artifacts.iter().any(|a| a == "functionals.csv"));
    assert!(artifacts.iter().any(|a| a == "functionals.json"));
    assert_eq!(manifest["checks"]["lower_bound"]["pass"], Value::Bool(true));
}

#[test]
fn identical_configs_give_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "p.json", PERTURBED);
    let cfg = cfg.to_str().unwrap();
    assert!(riccilab(&["run-flow", "--config", cfg, "--run-dir", "a"], tmp.path()).status.success());
    let second = Command::new(env!("CARGO_BIN_EXE_riccilab"))
        .args(["run-flow", "--config", cfg, "--run-dir", "b"])
        .env("RICCILAB_THREADS", "1")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(second.status.success());
    for dir in ["a", "b"] {
        for cmd in ["functionals", "spectrum"] {
            let out = riccilab(&[cmd, "--run-dir", dir], tmp.path());
            assert!(out.status.code().is_some_and(|c| c <= 1), "{out:?}");
        }
    }
    for file in [
        "curvature.csv",
        "functionals.csv",
        "spectrum.csv",
        "functionals.json",
        "checkpoints/000022/metric.rflb",
    ] {
        let a = fs::read(tmp.path().join("a").join(file)).unwrap();
        let b = fs::read(tmp.path().join("b").join(file)).unwrap();
        assert!(a == b, "{file} differs");
    }
}

#[test]
fn checkpoint_count_follows_from_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "p.json", PERTURBED);
    let out = riccilab(&["run-flow", "--config", cfg.to_str().unwrap(), "--run-dir", "run"], tmp.path());
    assert!(out.status.success(), "{out:?}");
    // floor(0.45 / (0.002 · 10)) + 1
    let expected = 23;
    let dirs = fs::read_dir(tmp.path().join("run/checkpoints")).unwrap().count();
    assert_eq!(dirs, expected);
    let blob = fs::read(tmp.path().join("run/checkpoints/000022/metric.rflb")).unwrap();
    assert_eq!(&blob[..4], b"RFLB");
    assert_eq!(blob[4], 1);
    assert_eq!(blob.len(), 5 + 8 * 16 * 16 * 4);
    let m: Value =
        serde_json::from_slice(&fs::read(tmp.path().join("run/checkpoints/000022/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["step"], 220);
    assert!((m["time"].as_f64().unwrap() - 0.44).abs() < 1e-12);
}

#[test]
fn partial_and_damaged_runs_are_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "flat.json", FLAT);
    assert!(riccilab(&["run-flow", "--config", cfg.to_str().unwrap(), "--run-dir", "run"], tmp.path())
        .status
        .success());

    fs::write(tmp.path().join("run/PARTIAL"), "failed\n").unwrap();
    let out = riccilab(&["functionals", "--run-dir", "run"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("partial run"));
    fs::remove_file(tmp.path().join("run/PARTIAL")).unwrap();

    fs::remove_file(tmp.path().join("run/checkpoints/000002/metric.rflb")).unwrap();
    fs::remove_dir_all(tmp.path().join("run/checkpoints/000004")).unwrap();
    let out = riccilab(&["spectrum", "--run-dir", "run"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("000002") && err.contains("000004"), "{err}");

    fs::write(tmp.path().join("run/.lock"), "1\n").unwrap();
    let out = riccilab(&["run-flow", "--config", cfg.to_str().unwrap(), "--run-dir", "run"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
}

#[test]
fn unknown_fields_are_rejected_with_their_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.json", &FLAT.replace("\"t_end\"", "\"t_edn\""));
    let out = riccilab(&["run-flow", "--config", cfg.to_str().unwrap(), "--run-dir", "run"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("flow.t_edn"), "{err}");
    assert!(!tmp.path().join("run/manifest.json").exists());

    let cfg = write_config(
        tmp.path(),
        "seedless.json",
        &FLAT.replace(r#"{ "kind": "flat" }"#, r#"{ "kind": "random_fourier", "amplitude": 0.1 }"#),
    );
    let out = riccilab(&["run-flow", "--config", cfg.to_str().unwrap(), "--run-dir", "run"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("initial_metric.seed"));
}

#[test]
fn gaussian_table_matches_its_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let out = riccilab(&["gaussian", "--u0", "1", "--t0", "0", "--samples", "100", "--out", "g.csv"], tmp.path());
    assert!(out.status.success(), "{out:?}");
    let path = tmp.path().join("g.csv");
    let l = csv_column(&path, "lambda_1");
    let b = csv_column(&path, "bound");
    assert_eq!(l.len(), 100);
    for (x, y) in l.iter().zip(&b) {
        let (x, y): (f64, f64) = (x.parse().unwrap(), y.parse().unwrap());
        assert!((x - y).abs() <= 1e-12);
    }
}
