//! End-to-end tests of the `spikelab` binary.

use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};

fn spikelab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spikelab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

fn stderr_error(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str::<Value>(line).expect("stderr error is JSON")["error"].clone()
}

#[test]
fn schnakenberg_replication_threshold() {
    let out = spikelab(&[
        "thresholds",
        "--model",
        "schnakenberg",
        "--a",
        "0.2",
        "--b",
        "1",
        "--eps",
        "0.01",
        "--D",
        "2",
        "--K",
        "1",
    ]);
    assert!(out.status.success());
    let j = stdout_json(&out);
    assert_eq!(j["kind"], "replication");
    let l = j["L_crit"].as_f64().unwrap();
    assert!((l - 1.98).abs() < 0.02, "L_crit = {l}");
}

#[test]
fn exit_codes_and_error_reports() {
    let bad_flag = spikelab(&["thresholds", "--bogus"]);
    assert_eq!(bad_flag.status.code(), Some(2));
    assert_eq!(stderr_error(&bad_flag)["exit_code"], 2);

    let missing = spikelab(&["thresholds", "--model", "gm"]);
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(stderr_error(&missing)["kind"], "InvalidParameter");

    let invalid = spikelab(&["thresholds", "--model", "brusselator", "--f", "1.5"]);
    assert_eq!(invalid.status.code(), Some(2));

    let regime = spikelab(&["core", "--model", "gm", "--kappa", "0.5"]);
    assert_eq!(regime.status.code(), Some(4));
    assert_eq!(stderr_error(&regime)["kind"], "RegimeMismatch");

    let no_rep = spikelab(&["thresholds", "--model", "schnakenberg", "--a", "1.5"]);
    assert_eq!(no_rep.status.code(), Some(4));
}

#[test]
fn scenario_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let printed = spikelab(&[
        "--print-scenario",
        "--name",
        "gm-k2",
        "thresholds",
        "--model",
        "gm",
        "--kappa",
        "0.5",
        "--K",
        "2",
    ]);
    assert!(printed.status.success());
    let path = dir.path().join("scenario.json");
    std::fs::write(&path, &printed.stdout).unwrap();

    let reprinted = spikelab(&["--print-scenario", "run", path.to_str().unwrap()]);
    assert_eq!(
        reprinted.stdout, printed.stdout,
        "scenario text is reproduced byte for byte"
    );

    let direct = spikelab(&["thresholds", "--model", "gm", "--kappa", "0.5", "--K", "2"]);
    let from_file = spikelab(&["run", path.to_str().unwrap()]);
    assert!(from_file.status.success());
    assert_eq!(direct.stdout, from_file.stdout);
    let l = stdout_json(&from_file)["L_crit"].as_f64().unwrap();
    assert!((l - 7.8).abs() / 7.8 < 0.03);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"name":"x","command":"thresholds","model":{"kind":"gm","params":{"kappa":0.5},"epsilon":0.01,"D":1},"options":{"K":1,"extra":true}}"#).unwrap();
    let rejected = spikelab(&["run", bad.to_str().unwrap()]);
    assert_eq!(rejected.status.code(), Some(2));
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn output_directory_is_deterministic_and_described() {
    let root = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let dir = root.path().join(tag);
        let out = spikelab(&[
            "--out",
            dir.to_str().unwrap(),
            "phase-diagram",
            "--family",
            "brusselator",
            "--grid",
            "12x8",
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        dir
    };
    let (a, b) = (run("a"), run("b"));
    for name in [
        "phase.csv",
        "phase.svg",
        "phase.json",
        "manifest.json",
        "scenario.json",
    ] {
        assert_eq!(
            read(&a, name),
            read(&b, name),
            "{name} differs between runs"
        );
    }
    let manifest: Value = serde_json::from_slice(&read(&a, "manifest.json")).unwrap();
    assert_eq!(manifest["command"], "phase-diagram");
    assert_eq!(manifest["status"], "ok");
    let files: Vec<&str> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    let mut sorted = files.clone();
    sorted.sort();
    assert_eq!(files, sorted);
    for f in &files {
        assert!(a.join(f).is_file(), "{f} listed but missing");
    }
    let f_c = manifest["summary"]["f_c"].as_f64().unwrap();
    assert!((f_c - 0.769).abs() < 0.005);
    let csv = String::from_utf8(read(&a, "phase.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 12 * 8);
}

#[test]
fn core_and_spectrum_artifacts() {
    let root = tempfile::tempdir().unwrap();
    let dir = root.path().join("core");
    let out = spikelab(&[
        "--out",
        dir.to_str().unwrap(),
        "core",
        "--model",
        "brusselator",
        "--f",
        "0.8",
        "--branch",
    ]);
    assert!(out.status.success());
    let j = stdout_json(&out);
    assert!((j["B_c"].as_f64().unwrap() - 0.685).abs() < 0.005);
    let branch = String::from_utf8(read(&dir, "core_branch.csv")).unwrap();
    assert!(branch.starts_with("f,B,beta,C,is_fold\n"));
    assert_eq!(branch.lines().filter(|l| l.ends_with(",1")).count(), 1);

    let dir = root.path().join("spectrum");
    let out = spikelab(&[
        "--out",
        dir.to_str().unwrap(),
        "spectrum",
        "--model",
        "schnakenberg",
        "--a",
        "0.2",
        "--B",
        "0.8",
    ]);
    assert!(out.status.success());
    let eig: Value = serde_json::from_slice(&read(&dir, "eigen.json")).unwrap();
    let lead = eig["eigenvalues"][0][0].as_f64().unwrap();
    assert!(lead < 0.0, "primary branch is stable, got {lead}");
    assert!(String::from_utf8(read(&dir, "mode_0.csv"))
        .unwrap()
        .starts_with("y,Phi0_re"));
}

#[test]
fn short_simulation_writes_events_and_snapshots() {
    let root = tempfile::tempdir().unwrap();
    let dir = root.path().join("sim");
    let out = spikelab(&[
        "--out",
        dir.to_str().unwrap(),
        "simulate",
        "--model",
        "schnakenberg",
        "--a",
        "0.5",
        "--rho",
        "1e-3",
        "--L-end",
        "1.3",
        "--n",
        "1024",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let j = stdout_json(&out);
    assert!((j["final_L"].as_f64().unwrap() - 1.3).abs() < 1e-9);
    assert!(read(&dir, "events.csv").starts_with(b"t,L,kind"));
    assert!(dir.join("heatmap.svg").is_file());
    assert!(dir.join("snapshots").join("snapshot_00000.csv").is_file());
    assert!(
        !dir.join("checkpoint.json").exists(),
        "finished runs leave no checkpoint"
    );
}

#[test]
fn verify_runs_selected_criteria() {
    let root = tempfile::tempdir().unwrap();
    let dir = root.path().join("verify");
    let out = spikelab(&[
        "--out",
        dir.to_str().unwrap(),
        "verify",
        "--criteria",
        "1,3",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("2/2 criteria passed"));
    let reports: Value = serde_json::from_slice(&read(&dir, "verify.json")).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 2);

    let bad = spikelab(&["verify", "--criteria", "11"]);
    assert_eq!(bad.status.code(), Some(2));
}
