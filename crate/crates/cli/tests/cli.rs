use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"{
  "seed": 1,
  "dataset": {"kind": "moons", "samples": 200, "noise": 0.1, "seed": 0},
  "train": {"iterations": 3},
  "scenarios": [],
  "grid": {"lower": [-3.0, -3.0], "upper": [3.0, 3.0], "resolution": 11}
}"#;

fn zubov(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zubov")).args(args).output().expect("binary runs")
}

fn train_tiny(dir: &Path) -> Output {
    let cfg = dir.join("cfg.json");
    fs::write(&cfg, TINY).unwrap();
    zubov(&["train", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()])
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(zubov(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(zubov(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(zubov(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = zubov(&["eval", "--checkpoint", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"seed": 1, "bogus": true}"#).unwrap();
    assert_eq!(zubov(&["train", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn train_then_every_model_command() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = train_tiny(d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(d.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next(),
        Some("step,loss_total,loss_cla,loss_fc,loss_con_mean,loss_con_max,loss_sep,acc_w_head,acc_fc_head,lr")
    );
    assert_eq!(lines.count(), 3);

    let ckpt = d.join("checkpoint.json");
    let ck = ckpt.to_str().unwrap();
    let ds = d.to_str().unwrap();

    assert!(zubov(&["eval", "--checkpoint", ck, "--out", ds]).status.success());
    assert!(fs::read_to_string(d.join("eval.csv")).unwrap().starts_with("scenario,"));

    assert!(zubov(&["sample-boundary", "--checkpoint", ck, "--out", ds, "--directions", "8"]).status.success());
    let boundary = fs::read_to_string(d.join("boundary.csv")).unwrap();
    assert_eq!(boundary.lines().count(), 1 + 2 * 8);

    let plot = zubov(&["plot", "--checkpoint", ck, "--out", ds, "--grid", "21", "--trajectories", "3"]);
    assert!(plot.status.success(), "{}", String::from_utf8_lossy(&plot.stderr));
    let svg = fs::read_to_string(d.join("regions.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).expect("well-formed SVG");
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    assert_eq!(svg.matches("<polyline").count(), 3);

    // An untrained model need not pass the checks; both outcomes are valid runs.
    let certify = zubov(&["certify", "--checkpoint", ck, "--out", ds, "--rho", "0.5"]);
    assert!(matches!(certify.status.code(), Some(0 | 1)));
    assert!(d.join("roa.json").exists());

    let verify = zubov(&["verify", "--checkpoint", ck, "--out", ds, "--trials", "200"]);
    assert!(matches!(verify.status.code(), Some(0 | 1)));
    let reports: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("reports.json")).unwrap()).unwrap();
    // Six separability cases, then convexity, overlap, containment, alignment.
    assert_eq!(reports.as_array().unwrap().len(), 10);
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(train_tiny(a.path()).status.success());
    assert!(train_tiny(b.path()).status.success());
    for f in ["checkpoint.json", "metrics.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn model_free_verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = zubov(&["verify", "--out", dir.path().to_str().unwrap(), "--trials", "2000"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}
