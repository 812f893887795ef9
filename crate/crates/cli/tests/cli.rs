use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn svchunk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svchunk"))
        .args(args)
        .env("SVCHUNK_COMMAND_OVERHEAD_NS", "0")
        .output()
        .expect("binary runs")
}

fn gen(dir: &Path, name: &str, args: &[&str]) -> String {
    let path = dir.join(name).to_string_lossy().into_owned();
    let mut full = vec!["gen"];
    full.extend_from_slice(args);
    full.extend_from_slice(&["--out", &path]);
    let out = svchunk(&full);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    path
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn run_ghz16_lossy() {
    let dir = tempfile::tempdir().unwrap();
    let qasm = gen(dir.path(), "ghz16.qasm", &["ghz", "-n", "16"]);
    let out = svchunk(&[
        "run", &qasm, "--chunk-qubits", "12", "--batch-qubits", "16", "--error-bound", "1e-6",
        "--strategy", "buffered",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let report = json(&out);
    assert!(report["fidelity"].as_f64().unwrap() >= 0.9999);
    for key in ["norm", "phase_seconds", "wall_seconds", "overlap_efficiency", "footprint", "stages", "config", "digest"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn run_writes_out_file_and_explains() {
    let dir = tempfile::tempdir().unwrap();
    let qasm = gen(dir.path(), "r.qasm", &["random", "-n", "8", "--gates", "30", "--seed", "2"]);
    let report = dir.path().join("report.json");
    let out = svchunk(&[
        "run", &qasm, "--chunk-qubits", "3", "--batch-qubits", "5", "--explain", "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("high qubits"));
    let value: Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(value["num_qubits"], 8);
}

#[test]
fn run_digest_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let qasm = gen(dir.path(), "r.qasm", &["random", "-n", "10", "--gates", "40", "--seed", "9"]);
    let args = ["run", qasm.as_str(), "--chunk-qubits", "4", "--batch-qubits", "7"];
    let a = json(&svchunk(&args));
    let b = json(&svchunk(&args));
    assert_eq!(a["digest"], b["digest"]);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let qasm = gen(dir.path(), "x.qasm", &["ghz", "-n", "4"]);
    let out = svchunk(&["run", &qasm, "--error-bound", "-1"]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.qasm");
    std::fs::write(&bad, "OPENQASM 2.0;\nqreg q[2];\nh q[0];\ncx q[0] q[1];\n").unwrap();
    let out = svchunk(&["run", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));

    assert_eq!(svchunk(&["run", "/nonexistent.qasm"]).status.code(), Some(2));
    assert_eq!(svchunk(&["run"]).status.code(), Some(2));
    assert_eq!(svchunk(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(svchunk(&["run", &qasm, "--strategy", "teleport"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let qasm = gen(dir.path(), "g.qasm", &["ghz", "-n", "6"]);
    let out = svchunk(&["run", &qasm, "--chunk-qubits", "3", "--batch-qubits", "4"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("window"));
}

#[test]
fn verify_lossless_passes() {
    let dir = tempfile::tempdir().unwrap();
    let qasm = gen(dir.path(), "r.qasm", &["random", "-n", "10", "--gates", "60", "--seed", "4"]);
    let out = svchunk(&["verify", &qasm, "--chunk-qubits", "4", "--batch-qubits", "7", "--error-bound", "0"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json(&out);
    assert_eq!(summary["mode"], "lossless");
    assert!(summary["max_deviation"].as_f64().unwrap() <= 1e-12);
}

#[test]
fn verify_tight_fidelity_fails() {
    let dir = tempfile::tempdir().unwrap();
    let qasm = gen(dir.path(), "r.qasm", &["random", "-n", "10", "--gates", "200", "--seed", "5"]);
    let out = svchunk(&[
        "verify", &qasm, "--chunk-qubits", "3", "--batch-qubits", "5", "--error-bound", "1e-2",
        "--min-fidelity", "0.999999",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fidelity"));
    assert_eq!(json(&out)["passed"], false);
}

#[test]
fn verify_refuses_large_registers() {
    let dir = tempfile::tempdir().unwrap();
    let qasm = gen(dir.path(), "g30.qasm", &["ghz", "-n", "30"]);
    let out = svchunk(&["verify", &qasm]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds oracle limit"));
}

#[test]
fn env_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let qasm = gen(dir.path(), "g.qasm", &["ghz", "-n", "6"]);
    let out = Command::new(env!("CARGO_BIN_EXE_svchunk"))
        .args(["run", &qasm])
        .env("SVCHUNK_CHUNK_QUBITS", "2")
        .env("SVCHUNK_BATCH_QUBITS", "4")
        .env("SVCHUNK_STRATEGY", "sync")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    assert_eq!(report["config"]["chunk_qubits"], 2);
    assert_eq!(report["config"]["strategy"], "synchronous");
}

#[test]
fn bench_transfer_reports_medians() {
    let out = svchunk(&["bench-transfer", "--exponents", "10,12", "--repetitions", "5", "--chunk-qubits", "8"]);
    assert_eq!(out.status.code(), Some(0));
    let report = json(&out);
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 6);
    for row in rows {
        assert_eq!(row["h2d_seconds"]["samples"].as_array().unwrap().len(), 5);
        assert!(row["h2d_ratio"].is_number());
    }
    assert!(report["machine"]["logical_cpus"].as_u64().unwrap() >= 1);
    let out = svchunk(&["bench-transfer", "--exponents", "12", "--memory-limit-bytes", "1024"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gen_writes_parseable_qasm() {
    let out = svchunk(&["gen", "qft", "-n", "4"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("OPENQASM 2.0;"));
    assert!(text.contains("qreg q[4];"));
}
