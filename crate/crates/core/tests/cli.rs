mod common;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn orxe(args: &[&str], stdin: Option<&[u8]>) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_orxe"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut pipe = child.stdin.take().unwrap();
    let bytes = stdin.unwrap_or_default().to_vec();
    // Feed stdin from another thread so a large output cannot fill its pipe first.
    let feeder = std::thread::spawn(move || pipe.write_all(&bytes));
    let out = child.wait_with_output().unwrap();
    feeder.join().unwrap().unwrap();
    out
}

fn ok(args: &[&str]) -> Output {
    let out = orxe(args, None);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn t3_file(dir: &Path) -> PathBuf {
    let p = dir.join("t3.jsonl");
    orxe::write_trace(&common::t3(), &p).unwrap();
    p
}

#[test]
fn search_writes_one_entry_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let trace = t3_file(dir.path());
    let out = path(dir.path(), "c.json");
    ok(&["search", "--trace", trace.to_str().unwrap(), "--lambdas", "0:1:0.5", "--out", &out]);
    let c = orxe::load_collection(&out).unwrap();
    assert_eq!(c.lambdas(), vec![0.0, 0.5, 1.0]);
    assert_eq!(c.entries[0].report.mean_cost_raw, 1.0);
}

#[test]
fn eval_snaps_to_nearest_entry_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let trace = t3_file(dir.path());
    let trace = trace.to_str().unwrap();
    let c = path(dir.path(), "c.json");
    let csv = path(dir.path(), "r.csv");
    ok(&["search", "--trace", trace, "--lambdas", "0:1:0.5", "--out", &c]);
    let out = ok(&["eval", "--trace", trace, "--configs", &c, "--lambda", "0.4", "--out", &csv]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nearest entry 0.5"));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "lambda,mean_cost_raw,mean_cost_norm,perf,mean_exit_conf,exit_0,exit_1,exit_2");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("0.5,"));

    ok(&["eval", "--trace", trace, "--configs", &c, "--out", &csv]);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 4);
}

#[test]
fn route_echoes_ids_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let trace = t3_file(dir.path());
    let c = path(dir.path(), "c.json");
    ok(&["search", "--trace", trace.to_str().unwrap(), "--lambdas", "0:1:0.5", "--out", &c]);
    let input = std::fs::read(&trace).unwrap();
    let out = orxe(&["route", "--configs", &c, "--lambda", "0"], Some(&input));
    assert!(out.status.success());
    let lines: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let ids: Vec<&str> = lines.iter().map(|v| v["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["s1", "s2", "s3", "s4"]);
    assert!(lines.iter().all(|v| v["exit"] == 0 && v["cost"] == 1.0 && v["lambda"] == 0.0));
}

#[test]
fn budget_routing_settles_in_band() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (calib, stream) = (path(d, "calib.jsonl"), path(d, "stream.jsonl"));
    let (raw, done) = (path(d, "raw.json"), path(d, "done.json"));
    ok(&["synth", "--experts", "4", "--samples", "5000", "--seed", "4", "--out", &calib]);
    ok(&["synth", "--experts", "4", "--samples", "10000", "--seed", "104", "--out", &stream]);
    ok(&["search", "--trace", &calib, "--lambdas", "0:1:0.02", "--out", &raw]);
    ok(&["postprocess", "--in", &raw, "--trace", &calib, "--out", &done]);
    let input = std::fs::read(&stream).unwrap();
    let out = orxe(
        &["route", "--configs", &done, "--budget", "10", "--window", "1000", "--hysteresis", "0.2"],
        Some(&input),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let costs: Vec<f64> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["cost"].as_f64().unwrap())
        .collect();
    assert_eq!(costs.len(), 10_000);
    let last = costs[9000..].iter().sum::<f64>() / 1000.0;
    assert!((last - 10.0).abs() <= 2.0, "final window mean {last}");
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(
        &bad,
        "{\"type\":\"header\",\"version\":1,\"experts\":[{\"name\":\"a\",\"cost\":1.0},{\"name\":\"b\",\"cost\":2.0}]}\n\
         {\"id\":\"x7\",\"conf\":[1.3,0.5],\"metric\":[0.0,1.0]}\n",
    )
    .unwrap();
    let out = orxe(&["validate", "--trace", bad.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("x7") && err.contains("conf"), "{err}");

    assert_eq!(orxe(&["search", "--bogus"], None).status.code(), Some(2));
    assert_eq!(orxe(&["route", "--configs", "c.json", "--lambda", "0.5", "--budget", "3"], None).status.code(), Some(2));
    let missing = orxe(&["validate", "--trace", "/nonexistent/trace.jsonl"], None);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/trace.jsonl"));
}

#[test]
fn train_gate_writes_a_loadable_model() {
    let dir = tempfile::tempdir().unwrap();
    let features = dir.path().join("f.jsonl");
    let rows: Vec<orxe::FeatureRow> = (0..64)
        .map(|i| {
            let x = i as f64 / 64.0;
            orxe::FeatureRow { id: format!("f{i}"), x: vec![x, 1.0 - x], metric: x }
        })
        .collect();
    orxe::gate::save_features(&rows, &features).unwrap();
    let model = path(dir.path(), "gate.json");
    ok(&[
        "train-gate", "--features", features.to_str().unwrap(), "--hidden", "4,4", "--epochs", "5", "--out", &model,
    ]);
    let m = orxe::gate::load_model(&model).unwrap();
    assert_eq!(m.input_dim(), 2);
}
