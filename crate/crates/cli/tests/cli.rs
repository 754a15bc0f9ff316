use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_switchstop"))
}

fn small_config(dir: &Path, extra: Value) -> PathBuf {
    let mut cfg = serde_json::json!({
        "detection": {"Q": [[-1, 1], [1, -1]], "lambda": 1, "gamma": 0.5, "c": 1,
                      "mu": [1, 2], "p1": 0.5, "p2": 0.5, "pi": 0.2},
        "axis": {"n": 101},
        "hjb": {"n1": 24, "n2": 24},
        "mc": {"n_paths": 300, "dt": 0.01},
        "risk": {"n_paths": 300, "dt": 0.01},
        "seed": 11,
        "output_dir": dir.join("out"),
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let p = dir.join("config.json");
    std::fs::write(&p, cfg.to_string()).unwrap();
    p
}

fn run(args: &[&str], cfg: &Path) -> Output {
    bin().args(args).arg("--config").arg(cfg).output().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn validate_reports_all_pass() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path(), serde_json::json!({}));
    let out = run(&["validate"], &cfg);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let a = read_json(&d.path().join("out/assumptions.json"));
    assert_eq!(a["data"]["all_pass"], true);
    assert_eq!(a["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn boundary_auto_runs_its_dependency_then_reuses_it() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path(), serde_json::json!({}));
    let out = run(&["solve-boundary"], &cfg);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = read_json(&d.path().join("out/solve-boundary.manifest.json"));
    assert_eq!(m["dependencies"][0]["subcommand"], "solve-1d");
    assert_eq!(m["dependencies"][0]["action"], "auto_run");
    assert!(d.path().join("out/axis1.csv").exists());

    let out = run(&["solve-boundary"], &cfg);
    assert!(out.status.success());
    let m = read_json(&d.path().join("out/solve-boundary.manifest.json"));
    assert_eq!(m["dependencies"][0]["action"], "reused");
}

#[test]
fn changed_config_does_not_reuse_stale_artifacts() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path(), serde_json::json!({}));
    assert!(run(&["solve-1d"], &cfg).status.success());
    let out = bin().args(["solve-boundary", "--seed", "12", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success());
    let m = read_json(&d.path().join("out/solve-boundary.manifest.json"));
    assert_eq!(m["dependencies"][0]["action"], "auto_run");
}

#[test]
fn value_artifacts_are_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path(), serde_json::json!({}));
    let csv = || {
        let _ = std::fs::remove_dir_all(d.path().join("out"));
        let out = run(&["value"], &cfg);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(d.path().join("out/value.csv")).unwrap()
    };
    let a = csv();
    assert_eq!(a, csv());
    assert!(String::from_utf8(a).unwrap().starts_with("# config_hash: "));
}

#[test]
fn unknown_strategy_is_a_json_error() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path(), serde_json::json!({}));
    let out = run(&["value", "--strategy", "kde"], &cfg);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "unknown_strategy");
    assert!(err["error"]["message"].as_str().unwrap().contains("stopped, free"));
}

#[test]
fn malformed_config_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path(), serde_json::json!({"hjb": {"n1": 24, "n2": 24, "extract_tol": -1.0}}));
    let out = run(&["solve-hjb"], &cfg);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "invalid_input");
}

#[test]
fn generic_model_runs_without_detection_block() {
    let d = tempfile::tempdir().unwrap();
    let model = serde_json::json!({
        "Q": [[-1, 1], [1, -1]], "a": [[1, 1], [1, 1]],
        "B": [[[1.5, 0], [0, 1.5]], [[1.5, 0], [0, 1.5]]],
        "sigma": [[1, 1], [2, 2]], "lambda": [1, 1],
        "cost": {"kind": "affine", "p1": [0.5, 0.5], "p2": [0.5, 0.5], "kappa": [2, 2]}
    });
    let cfg = small_config(d.path(), serde_json::json!({}));
    let mut v = read_json(&cfg);
    v.as_object_mut().unwrap().remove("detection");
    v["model"] = model;
    std::fs::write(&cfg, v.to_string()).unwrap();
    let out = run(&["solve-hjb"], &cfg);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let h = read_json(&d.path().join("out/hjb.json"));
    assert_eq!(h["data"]["n1"], 24);

    let out = run(&["risk"], &cfg);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn detect_replay_matches_simulated_run() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path(), serde_json::json!({}));
    let out = run(&["detect", "--substream", "3"], &cfg);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first: Value = serde_json::from_slice(&out.stdout).unwrap();
    let scenario = d.path().join("scenario.csv");
    std::fs::copy(d.path().join("out/scenario.csv"), &scenario).unwrap();

    let out = bin().args(["detect", "--replay"]).arg(&scenario).arg("--config").arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let second: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(first, second);
    let m = read_json(&d.path().join("out/detect.manifest.json"));
    assert_eq!(m["dependencies"][0]["action"], "reused");
}

#[test]
fn risk_strategies_agree_roughly() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path(), serde_json::json!({}));
    let j = |strategy: &str| {
        let out = run(&["risk", "--strategy", strategy], &cfg);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let r = read_json(&d.path().join("out/risk.json"));
        assert_eq!(r["data"]["strategy"], strategy);
        (r["data"]["report"]["j"]["mean"].as_f64().unwrap(), r["data"]["report"]["j"]["std_error"].as_f64().unwrap())
    };
    let (a, sa) = j("scenario");
    let (b, sb) = j("statistics");
    assert!((a - b).abs() < 4.0 * (sa * sa + sb * sb).sqrt() + 1e-3, "{a} vs {b}");
}

#[test]
fn crosscheck_subset_prints_table() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(
        d.path(),
        serde_json::json!({"crosscheck": {"axis": {"n": 101}, "hjb": {"n1": 24, "n2": 24}}}),
    );
    let out = run(&["crosscheck", "--only", "3,4"], &cfg);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains(" 3 boundary structure"), "{text}");
    assert!(text.contains(" 4 value-field invariants"), "{text}");
    assert!(text.contains("passed"));
    let r = read_json(&d.path().join("out/crosscheck.json"));
    assert_eq!(r["data"].as_array().unwrap().len(), 2);
}
