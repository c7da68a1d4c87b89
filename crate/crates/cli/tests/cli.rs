use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use ddq_cli::artifacts::{seed_dir, snapshot_path, REPORT};
use ddq_cli::scenario::ScenarioFile;
use ddq_cli::{analyze, run_scenario, verify, CliError};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"))
}

fn ddq() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ddq"))
}

const OUT_OF_BOUNDS: &str = r#"
name = "oob"
seed = 1
scans = 2

[[events]]
scan = 0
kind = "write"
pattern = """
@40,40
11
"""
"#;

#[test]
fn every_fixture_parses_and_expands() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let sc =
                ScenarioFile::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            let (_, instances) = sc.instances().unwrap();
            assert_eq!(instances.len(), sc.seeds as usize, "{}", path.display());
            n += 1;
        }
    }
    assert_eq!(n, 15);
}

#[test]
fn echo_round_trips() {
    let sc = ScenarioFile::load(&fixture("gate_10")).unwrap();
    let back = ScenarioFile::from_toml(&sc.to_toml()).unwrap();
    assert_eq!(sc, back);
}

#[test]
fn unknown_field_is_rejected() {
    let err =
        ScenarioFile::from_toml("name = \"x\"\nseed = 1\nscans = 1\nbogus = 3\n").unwrap_err();
    assert!(matches!(err, CliError::Validation(_)));
}

#[test]
fn out_of_bounds_write_exits_2_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("oob.toml");
    fs::write(&path, OUT_OF_BOUNDS).unwrap();
    let out = tmp.path().join("out");

    let err = run_scenario(&path, &out, false).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(!out.exists());

    let status = ddq()
        .args(["run", path.to_str().unwrap(), "-o", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn run_writes_counts_and_snapshots() {
    let tmp = tempfile::tempdir().unwrap();
    let report = run_scenario(&fixture("write_erase_retrieve"), tmp.path(), true).unwrap();
    let sc = ScenarioFile::load(&fixture("write_erase_retrieve")).unwrap();
    let dir = seed_dir(tmp.path(), sc.seed);

    let counts = fs::read_to_string(dir.join("counts.csv")).unwrap();
    assert_eq!(counts.lines().count(), sc.scans as usize + 2);
    for k in 0..=sc.scans as usize {
        assert!(snapshot_path(tmp.path(), sc.seed, k).exists());
    }
    assert!(tmp.path().join(REPORT).exists());
    assert_eq!(report["scans"], sc.scans);

    let written = fs::read_to_string(snapshot_path(tmp.path(), sc.seed, 1)).unwrap();
    let erased = fs::read_to_string(snapshot_path(tmp.path(), sc.seed, 2)).unwrap();
    let rewritten = fs::read_to_string(snapshot_path(tmp.path(), sc.seed, 4)).unwrap();
    assert_ne!(written, erased);
    assert_eq!(written, rewritten);
}

#[test]
fn verify_accepts_untouched_run_and_names_tampered_scan() {
    let tmp = tempfile::tempdir().unwrap();
    run_scenario(&fixture("write_erase_retrieve"), tmp.path(), false).unwrap();
    verify(tmp.path()).unwrap();

    let target = snapshot_path(tmp.path(), 1, 3);
    let mut bytes = fs::read(&target).unwrap();
    let i = bytes.iter().position(|&b| b == b'0').expect("an S0 cell");
    bytes[i] = b'2';
    fs::write(&target, bytes).unwrap();

    match verify(tmp.path()) {
        Err(CliError::Mismatch(msg)) => assert!(msg.contains("scan 3"), "{msg}"),
        other => panic!("expected mismatch, got {other:?}"),
    }
    let status = ddq()
        .args(["verify", tmp.path().to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn verify_reports_missing_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    run_scenario(&fixture("write_erase_retrieve"), tmp.path(), false).unwrap();
    fs::remove_file(snapshot_path(tmp.path(), 1, 2)).unwrap();
    match verify(tmp.path()) {
        Err(CliError::Io(msg)) => assert!(msg.contains("scan_002"), "{msg}"),
        other => panic!("expected missing file, got {other:?}"),
    }
}

#[test]
fn analyze_reproduces_report_entry() {
    let tmp = tempfile::tempdir().unwrap();
    let report = run_scenario(&fixture("voronoi"), tmp.path(), false).unwrap();
    let stored = report["analyses"]
        .as_array()
        .unwrap()
        .iter()
        .find(|a| a["kind"] == "voronoi")
        .expect("voronoi entry")["result"]
        .clone();
    assert_eq!(analyze(tmp.path(), "voronoi").unwrap(), stored);

    let out = ddq()
        .args(["analyze", tmp.path().to_str().unwrap(), "--kind", "voronoi"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let printed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed, stored);
}

#[test]
fn unknown_analysis_kind_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    run_scenario(&fixture("density"), tmp.path(), false).unwrap();
    assert_eq!(analyze(tmp.path(), "nonsense").unwrap_err().exit_code(), 2);
}

#[test]
fn density_halves_are_distinct_circuits() {
    let tmp = tempfile::tempdir().unwrap();
    let report = run_scenario(&fixture("density"), tmp.path(), false).unwrap();
    assert_eq!(report["analyses"][0]["result"]["distinct"], true);
}
