//! Run directories: snapshots, state counts, event logs and frames.

use std::fs;
use std::path::{Path, PathBuf};

use ddq_core::engine::{LogEntry, Trajectory};
use ddq_core::pattern::{parse_grid, serialize_grid};
use ddq_core::{CellState, HexGrid};

use crate::scenario::ScenarioFile;
use crate::CliError;

pub const SCENARIO_ECHO: &str = "scenario.toml";
pub const REPORT: &str = "report.json";

/// Pixel edge of one cell in rendered frames.
pub const CELL_PX: usize = 8;

/// Snapshots of one seed as stored on disk.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub grids: Vec<HexGrid>,
}

pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed_{seed:04}"))
}

pub fn snapshot_path(root: &Path, seed: u64, scan: usize) -> PathBuf {
    seed_dir(root, seed).join(format!("scan_{scan:03}.txt"))
}

fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Legend colors: S0 blue, S1 green, S2 yellow, S3 red.
pub fn state_color(s: CellState) -> [u8; 3] {
    match s {
        CellState::S0 => [0, 0, 255],
        CellState::S1 => [0, 200, 0],
        CellState::S2 => [255, 255, 0],
        CellState::S3 => [255, 0, 0],
    }
}

/// Binary PPM with one square block per cell; odd rows shift by half a block.
pub fn render_ppm(grid: &HexGrid) -> Vec<u8> {
    let w = grid.width() * CELL_PX + CELL_PX / 2;
    let h = grid.height() * CELL_PX;
    let mut px = vec![255u8; w * h * 3];
    for (i, &s) in grid.cells().iter().enumerate() {
        let (col, row) = (i % grid.width(), i / grid.width());
        let x0 = col * CELL_PX + (row % 2) * CELL_PX / 2;
        let color = state_color(s);
        for y in row * CELL_PX..(row + 1) * CELL_PX {
            for x in x0..x0 + CELL_PX {
                px[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&color);
            }
        }
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(px);
    out
}

fn write_counts(path: &Path, traj: &Trajectory) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io(path, e))?;
    w.write_record(["scan", "time_s", "s0", "s1", "s2", "s3", "charge"])
        .map_err(|e| io(path, e))?;
    for s in &traj.snapshots {
        let g = &s.grid;
        let row = [
            s.scan.to_string(),
            s.time_s.to_string(),
            g.count(CellState::S0).to_string(),
            g.count(CellState::S1).to_string(),
            g.count(CellState::S2).to_string(),
            g.count(CellState::S3).to_string(),
            g.total_charge().to_string(),
        ];
        w.write_record(&row).map_err(|e| io(path, e))?;
    }
    w.flush().map_err(|e| io(path, e))
}

/// Store one seed's trajectory under `root`.
pub fn write_seed(root: &Path, seed: u64, traj: &Trajectory, frames: bool) -> Result<(), CliError> {
    let dir = seed_dir(root, seed);
    fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
    for (k, s) in traj.snapshots.iter().enumerate() {
        let p = snapshot_path(root, seed, k);
        fs::write(&p, serialize_grid(&s.grid)).map_err(|e| io(&p, e))?;
    }
    write_counts(&dir.join("counts.csv"), traj)?;
    let log = dir.join("events.json");
    let text = serde_json::to_string_pretty(&traj.events).expect("event log serializes");
    fs::write(&log, text).map_err(|e| io(&log, e))?;
    if frames {
        let fdir = dir.join("frames");
        fs::create_dir_all(&fdir).map_err(|e| io(&fdir, e))?;
        for (k, s) in traj.snapshots.iter().enumerate() {
            let p = fdir.join(format!("scan_{k:03}.ppm"));
            fs::write(&p, render_ppm(&s.grid)).map_err(|e| io(&p, e))?;
        }
    }
    Ok(())
}

pub fn read_events(root: &Path, seed: u64) -> Result<Vec<LogEntry>, CliError> {
    let p = seed_dir(root, seed).join("events.json");
    let text = fs::read_to_string(&p).map_err(|e| io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| io(&p, e))
}

/// Scenario echo and every stored snapshot. Missing files are listed together.
pub fn load_run(root: &Path) -> Result<(ScenarioFile, Vec<SeedRun>), CliError> {
    let echo = root.join(SCENARIO_ECHO);
    let text = fs::read_to_string(&echo).map_err(|e| io(&echo, e))?;
    let scenario = ScenarioFile::from_toml(&text)?;
    let mut missing = Vec::new();
    let mut runs = Vec::new();
    for seed in scenario.seed_list() {
        let mut grids = Vec::new();
        for k in 0..=scenario.scans as usize {
            let p = snapshot_path(root, seed, k);
            match fs::read_to_string(&p) {
                Ok(t) => grids.push(parse_grid(&t, scenario.grid.spacing).map_err(|e| io(&p, e))?),
                Err(_) => missing.push(p.display().to_string()),
            }
        }
        runs.push(SeedRun { seed, grids });
    }
    if !missing.is_empty() {
        return Err(CliError::Io(format!(
            "missing files:\n  {}",
            missing.join("\n  ")
        )));
    }
    Ok((scenario, runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_colors_follow_states() {
        let mut g = HexGrid::new(2, 2, 1.0).unwrap();
        let cells: Vec<_> = g.coords().collect();
        for (c, s) in cells.iter().zip(CellState::ALL) {
            g.set(*c, s).unwrap();
        }
        let img = render_ppm(&g);
        let header = b"P6\n20 16\n255\n";
        assert_eq!(&img[..header.len()], header);
        let px = &img[header.len()..];
        let at = |x: usize, y: usize| &px[(y * 20 + x) * 3..(y * 20 + x) * 3 + 3];
        assert_eq!(at(1, 1), state_color(CellState::S0));
        assert_eq!(at(9, 1), state_color(CellState::S1));
        assert_eq!(at(5, 9), state_color(CellState::S2));
        assert_eq!(at(13, 9), state_color(CellState::S3));
        assert_eq!(at(1, 9), [255, 255, 255]);
    }
}
