//! Scenario runner for the DDQ cellular automaton: runs seed ensembles,
//! stores trajectories and writes analysis reports.

pub mod analyses;
pub mod artifacts;
pub mod scenario;

use std::fs;
use std::path::{Path, PathBuf};

use ddq_core::engine::{run, Trajectory};
use ddq_core::pattern::serialize_grid;
use rayon::prelude::*;
use serde_json::{json, Value};

use artifacts::{load_run, read_events, snapshot_path, write_seed, SeedRun, REPORT, SCENARIO_ECHO};
use scenario::{AnalysisSpec, Instance, ScenarioFile};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("analysis failed: {0}")]
    Analysis(String),
    #[error("verification failed: {0}")]
    Mismatch(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Analysis(_) => 3,
            CliError::Mismatch(_) | CliError::Io(_) => 1,
        }
    }
}

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn simulate(instances: &[Instance]) -> Result<Vec<Trajectory>, CliError> {
    instances
        .par_iter()
        .map(|i| {
            run(i.initial.clone(), &i.schedule, &i.config)
                .map_err(|e| CliError::Validation(format!("seed {}: {e}", i.seed)))
        })
        .collect()
}

/// Run every analysis request; failures are reported per entry.
pub fn build_report(
    sc: &ScenarioFile,
    runs: &[SeedRun],
    events: Value,
) -> Result<(Value, bool), CliError> {
    let (ctx, _) = sc.instances()?;
    let mut ok = true;
    let results: Vec<Value> = sc
        .analysis
        .iter()
        .map(|spec| match analyses::compute(spec, sc, &ctx, runs) {
            Ok(v) => json!({ "kind": spec.kind(), "result": v }),
            Err(e) => {
                ok = false;
                json!({ "kind": spec.kind(), "error": e.to_string() })
            }
        })
        .collect();
    let report = json!({
        "tool": "ddq",
        "version": VERSION,
        "scenario": sc.name,
        "seeds": sc.seed_list(),
        "scans": sc.scans,
        "config": sc.sim_config(sc.seed),
        "events": events,
        "analyses": results,
    });
    Ok((report, ok))
}

/// Simulate a scenario and store its artifacts in `out`. Nothing is written
/// when validation or simulation fails.
pub fn run_scenario(path: &Path, out: &Path, frames: bool) -> Result<Value, CliError> {
    let sc = ScenarioFile::load(path)?;
    let (_, instances) = sc.instances()?;
    let trajectories = simulate(&instances)?;
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let echo = out.join(SCENARIO_ECHO);
    fs::write(&echo, sc.to_toml()).map_err(|e| CliError::Io(format!("{}: {e}", echo.display())))?;
    for (inst, traj) in instances.iter().zip(&trajectories) {
        write_seed(out, inst.seed, traj, frames)?;
    }
    let runs: Vec<SeedRun> = instances
        .iter()
        .zip(trajectories)
        .map(|(i, t)| SeedRun {
            seed: i.seed,
            grids: t.snapshots.into_iter().map(|s| s.grid).collect(),
        })
        .collect();
    let events = serde_json::to_value(read_events(out, sc.seed)?).expect("event log serializes");
    let (report, ok) = build_report(&sc, &runs, events)?;
    let rpath = out.join(REPORT);
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&rpath, text).map_err(|e| CliError::Io(format!("{}: {e}", rpath.display())))?;
    if ok {
        Ok(report)
    } else {
        let errors: Vec<String> = report["analyses"]
            .as_array()
            .into_iter()
            .flatten()
            .filter_map(|a| a["error"].as_str().map(String::from))
            .collect();
        Err(CliError::Analysis(errors.join("; ")))
    }
}

/// Re-run a stored scenario and compare every snapshot byte for byte.
pub fn verify(dir: &Path) -> Result<(), CliError> {
    let echo = dir.join(SCENARIO_ECHO);
    let text =
        fs::read_to_string(&echo).map_err(|e| CliError::Io(format!("{}: {e}", echo.display())))?;
    let sc = ScenarioFile::from_toml(&text)?;
    let (_, instances) = sc.instances()?;
    let missing: Vec<String> = instances
        .iter()
        .flat_map(|i| (0..=sc.scans as usize).map(move |k| snapshot_path(dir, i.seed, k)))
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Io(format!(
            "missing files:\n  {}",
            missing.join("\n  ")
        )));
    }
    let trajectories = simulate(&instances)?;
    for (inst, traj) in instances.iter().zip(&trajectories) {
        for (k, s) in traj.snapshots.iter().enumerate() {
            let p = snapshot_path(dir, inst.seed, k);
            let stored = fs::read_to_string(&p)
                .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            if stored != serialize_grid(&s.grid) {
                return Err(CliError::Mismatch(format!(
                    "seed {} scan {k} differs from replay",
                    inst.seed
                )));
            }
        }
    }
    Ok(())
}

/// Recompute one analysis from a run directory.
pub fn analyze(dir: &Path, kind: &str) -> Result<Value, CliError> {
    let (sc, runs) = load_run(dir)?;
    let spec = sc
        .analysis
        .iter()
        .find(|a| a.kind() == kind)
        .cloned()
        .or_else(|| AnalysisSpec::default_for(kind))
        .ok_or_else(|| CliError::Validation(format!("unknown analysis kind {kind:?}")))?;
    let (ctx, _) = sc.instances()?;
    analyses::compute(&spec, &sc, &ctx, &runs)
}

/// Output directory of each scenario: `out` itself for a single scenario,
/// `out/<name>` for several.
pub fn output_dirs(paths: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>, CliError> {
    if paths.len() == 1 {
        return Ok(vec![out.to_path_buf()]);
    }
    paths
        .iter()
        .map(|p| {
            let sc = ScenarioFile::load(p)?;
            Ok(out.join(&sc.name))
        })
        .collect()
}
