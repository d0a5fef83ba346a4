use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mtjsnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtjsnn")).args(args).output().unwrap()
}

fn write_config(dir: &Path, json: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn help_lists_every_mode() {
    let out = mtjsnn(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for mode in ["characterize", "fit", "train", "eval", "cosim"] {
        assert!(text.contains(mode), "{mode} missing from help");
    }
}

#[test]
fn config_problems_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = mtjsnn(&["train", "--config", dir.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let cfg = write_config(dir.path(), r#"{"epochs": 3}"#);
    let out = mtjsnn(&["train", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config error"));

    let cfg = write_config(
        dir.path(),
        &format!(r#"{{"out_dir": {:?}}}"#, dir.path().join("out").to_str().unwrap()),
    );
    let out = mtjsnn(&["eval", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`checkpoint`"));

    let out = mtjsnn(&["cosim", "--config", &cfg, "--k", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let mnist = dir.path().join("mnist");
    fs::create_dir_all(&mnist).unwrap();
    for name in [
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ] {
        fs::write(mnist.join(name), b"not an idx file").unwrap();
    }
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"out_dir": {:?}, "data": {{"mnist_dir": {:?}}}}}"#,
            dir.path().join("out").to_str().unwrap(),
            mnist.to_str().unwrap()
        ),
    );
    let out = mtjsnn(&["train", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("IDX format error"));
}

#[test]
fn characterize_succeeds_and_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let cfg = write_config(
        dir.path(),
        r#"{"seed": 5, "grid": {"v1": {"start": 0.0, "stop": 0.0, "n": 1}, "v2": {"start": 0.0, "stop": 0.0, "n": 1}, "max_time": 2e-8, "target_dwells": null}}"#,
    );
    let out = mtjsnn(&[
        "characterize",
        "--config",
        &cfg,
        "--seed",
        "9",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("characterize done"));
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["seed"], 9);
    assert!(out_dir.join("contour.csv").exists());
}
