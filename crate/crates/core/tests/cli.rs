mod common;

use std::fs;
use std::process::{Command, Output};

use common::fixture_path;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctmc-evidence")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const PROP: &str = "prop:'empty'@0.1";

#[test]
fn analyze_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("trace.csv");
    let dump = dir.path().join("imdp.txt");
    let o = run(&[
        "analyze",
        &fixture_path("invent.ctmc"),
        &fixture_path("invent-1.evidence"),
        "--weights",
        PROP,
        "--max-iters",
        "3",
        "--threads",
        "2",
        "--out",
        csv.to_str().unwrap(),
        "--dump-imdp",
        dump.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let line = stdout(&o);
    assert!(line.starts_with("lower=") && line.contains(" upper=") && line.contains(" iters=3 total_s="), "{line}");
    let trace = fs::read_to_string(csv).unwrap();
    assert_eq!(trace.lines().count(), 4);
    assert!(trace.starts_with("iter,elapsed_s,lower,upper,"));
    assert!(!trace.contains('\r'));
    assert!(fs::read_to_string(dump).unwrap().contains("--t*-->"));
}

#[test]
fn precise_evidence_collapses() {
    let dir = tempfile::tempdir().unwrap();
    let ev = dir.path().join("rho.evidence");
    fs::write(&ev, "evidence\nobs !empty @ 0\nobs !empty @ 1\nobs empty @ 2.1\nobs !empty @ 2.9\n").unwrap();
    let model = fixture_path("invent.ctmc");
    let o = run(&["precise", &model, ev.to_str().unwrap(), "--weights", PROP]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "0.0825369619150");
    let o = run(&["analyze", &model, ev.to_str().unwrap(), "--weights", PROP]);
    assert!(stdout(&o).contains(" iters=1 "), "{}", stdout(&o));
    let o = run(&["likelihood", &model, ev.to_str().unwrap()]);
    let p: f64 = stdout(&o).trim().parse().unwrap();
    assert!(p > 0.0 && p < 1.0);
}

#[test]
fn weight_file_and_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let wf = dir.path().join("w.txt");
    fs::write(&wf, "s0 1\ns1 0\ns2 0\n").unwrap();
    let spec = format!("file:{}", wf.display());
    let args = ["sample", &fixture_path("invent.ctmc"), &fixture_path("invent-2.evidence"), "--weights", &spec, "-n", "10", "--seed", "3"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(stdout(&a).lines().count(), 11);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let model = fixture_path("invent.ctmc");
    let bad_model = dir.path().join("bad.ctmc");
    fs::write(&bad_model, "ctmc\nstate a\nrate a a -1\n").unwrap();
    let o = run(&["likelihood", bad_model.to_str().unwrap(), &fixture_path("invent-1.evidence")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.ctmc:3:"));

    let unknown = dir.path().join("u.evidence");
    fs::write(&unknown, "evidence\nobs broken @ 1..2\n").unwrap();
    let o = run(&["analyze", &model, unknown.to_str().unwrap(), "--weights", PROP]);
    assert_eq!(o.status.code(), Some(3));

    let unordered = dir.path().join("o.evidence");
    fs::write(&unordered, "evidence\nobs empty @ 2..3\nobs empty @ 1..1.5\n").unwrap();
    let o = run(&["analyze", &model, unordered.to_str().unwrap(), "--weights", PROP]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("o.evidence:3:"));

    let o = run(&["analyze", &model, "/nonexistent.evidence", "--weights", PROP]);
    assert_eq!(o.status.code(), Some(2));
}
