//! Report sections computed from stored snapshots.

use ddq_core::analysis::{
    doubling_time, fit_diffusion, fit_u2, gate_readout, kinetics_fit, mean_flux_series, n3_series,
    periodicity, profile_fit, FluxSeries,
};
use ddq_core::circuits::{segment_domains, voronoi_check, voronoi_generators, CircuitMap};
use ddq_core::engine::SCAN_PERIOD_S;
use ddq_core::{HexGrid, Region};
use serde_json::{json, Value};

use crate::artifacts::SeedRun;
use crate::scenario::{AnalysisSpec, Context, ScenarioFile, Setup};
use crate::CliError;

fn failed(kind: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Analysis(format!("{kind}: {e}"))
}

fn times_s(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 * SCAN_PERIOD_S).collect()
}

fn grid_refs(run: &SeedRun) -> Vec<&HexGrid> {
    run.grids.iter().collect()
}

fn pick(run: &SeedRun, snapshot: Option<u32>) -> &HexGrid {
    snapshot.map_or_else(
        || run.grids.last().expect("at least one snapshot"),
        |k| &run.grids[k as usize],
    )
}

fn domains_json(map: &CircuitMap) -> Value {
    map.domains
        .iter()
        .map(|d| json!({ "circuit": d.circuit.id(), "cells": d.cells, "area_nm2": d.area_nm2, "anchor": [d.anchor.q, d.anchor.r] }))
        .collect()
}

/// Dominant circuit over a region: the domain holding most of its cells.
fn dominant(grid: &HexGrid, map: &CircuitMap, region: &Region) -> (usize, u8, f64) {
    let mut counts = vec![0usize; map.domains.len()];
    for c in region.iter() {
        counts[map.domain_at(grid, c)] += 1;
    }
    let (best, n) = counts
        .iter()
        .enumerate()
        .max_by_key(|(i, n)| (**n, std::cmp::Reverse(*i)))
        .expect("domains");
    (
        best,
        map.domains[best].circuit.id(),
        *n as f64 / region.len() as f64,
    )
}

pub fn compute(
    spec: &AnalysisSpec,
    sc: &ScenarioFile,
    ctx: &Context,
    runs: &[SeedRun],
) -> Result<Value, CliError> {
    let kind = spec.kind();
    let first = runs.first().ok_or_else(|| failed(kind, "no runs"))?;
    match spec {
        AnalysisSpec::Diffusion { saturation_tol } => {
            let setup = ctx
                .diffusion
                .as_ref()
                .ok_or_else(|| failed(kind, "no diffusion setup"))?;
            let all: Vec<Vec<&HexGrid>> = runs.iter().map(grid_refs).collect();
            let mut lines: Vec<(FluxSeries, Vec<_>)> = Vec::new();
            for cells in &setup.lines {
                lines.push((
                    mean_flux_series(&all, cells).map_err(|e| failed(kind, e))?,
                    cells.clone(),
                ));
            }
            let fit = fit_diffusion(&lines, SCAN_PERIOD_S).map_err(|e| failed(kind, e))?;
            let probe = mean_flux_series(&all, &setup.probe).map_err(|e| failed(kind, e))?;
            let times = times_s(probe.len());
            let prof = profile_fit(&probe, &times, &setup.probe, *saturation_tol)
                .map_err(|e| failed(kind, e))?;
            Ok(json!({
                "seeds": runs.len(),
                "d_nm2_per_min": fit.d,
                "r2": fit.r2,
                "intercept": fit.intercept,
                "samples": fit.samples.len(),
                "profile": { "a": prof.model.a, "z0": prof.model.z0, "b": prof.model.b, "rms_residual": prof.residual },
                "line_midpoint_z": (setup.probe.len() as f64 - 1.0) / 2.0,
                "saturation_s": prof.saturation_s,
                "mean_probe_flux": probe,
            }))
        }
        AnalysisSpec::Cancer { u1 } => {
            let (tissue, _) = ctx
                .tissue
                .as_ref()
                .ok_or_else(|| failed(kind, "no tissue setup"))?;
            let (ring_s1, per_scan, delete_s2) = match sc.setup {
                Setup::Tissue {
                    ring_s1,
                    per_scan,
                    delete_s2,
                    ..
                } => (ring_s1, per_scan, delete_s2),
                _ => return Err(failed(kind, "no tissue setup")),
            };
            let times: Vec<f64> = times_s(first.grids.len()).into_iter().skip(1).collect();
            let mut mean = vec![0.0; times.len()];
            let mut halves = Vec::new();
            for run in runs {
                let series: Vec<f64> = n3_series(&grid_refs(run), &tissue.cg)
                    .into_iter()
                    .map(|x| x as f64)
                    .collect();
                for (m, v) in mean.iter_mut().zip(&series) {
                    *m += v / runs.len() as f64;
                }
                if let Some(h) = doubling_time(&series, &times) {
                    halves.push(h);
                }
            }
            let fit = kinetics_fit(&mean, &times).map_err(|e| failed(kind, e))?;
            let x0_0 = (ring_s1 + per_scan * times.len().saturating_sub(1)) as f64 / 2.0;
            let minutes: Vec<f64> = times.iter().map(|t| t / 60.0).collect();
            let u2 = fit_u2(&mean, &minutes, *u1, x0_0).map_err(|e| failed(kind, e))?;
            let t_half_mean =
                (!halves.is_empty()).then(|| halves.iter().sum::<f64>() / halves.len() as f64);
            Ok(json!({
                "seeds": runs.len(),
                "population": tissue.n,
                "ring_separation_nm": tissue.separation_nm,
                "delete_s2": delete_s2,
                "times_s": times,
                "n3_mean": mean,
                "fit": fit,
                "t_half_mean_s": t_half_mean,
                "t_half_seeds": halves.len(),
                "u1_per_min": u1,
                "x0_0": x0_0,
                "u2_per_min": u2,
            }))
        }
        AnalysisSpec::Gate => {
            let geom = ctx
                .gate
                .as_ref()
                .ok_or_else(|| failed(kind, "no gate setup"))?;
            let readouts: Vec<_> = runs
                .iter()
                .map(|r| gate_readout(&r.grids[0], r.grids.last().expect("snapshots"), geom))
                .collect();
            let ones = readouts.iter().filter(|r| r.bit).count();
            Ok(json!({
                "seeds": runs.len(),
                "ones": ones,
                "bit": 2 * ones > runs.len(),
                "geometry": geom,
                "readouts": readouts,
            }))
        }
        AnalysisSpec::Voronoi { snapshot } => {
            let g = pick(first, *snapshot);
            let map = segment_domains(g, &sc.sim_config(first.seed).circuits);
            let points = voronoi_generators(g, &map);
            let check = voronoi_check(g, &map, &points).map_err(|e| failed(kind, e))?;
            Ok(
                json!({ "seed": first.seed, "domains": domains_json(&map), "points": points, "check": check }),
            )
        }
        AnalysisSpec::Classify { snapshot } => {
            let g = pick(first, *snapshot);
            let map = segment_domains(g, &sc.sim_config(first.seed).circuits);
            let mut out = json!({ "seed": first.seed, "domains": domains_json(&map) });
            if let Some((a, b)) = &ctx.density {
                let (da, ta, fa) = dominant(g, &map, a);
                let (db, tb, fb) = dominant(g, &map, b);
                out["halves"] = json!([
                    { "domain": da, "circuit": ta, "coverage": fa },
                    { "domain": db, "circuit": tb, "coverage": fb },
                ]);
                out["distinct"] = json!(da != db && ta != tb);
            }
            Ok(out)
        }
        AnalysisSpec::Periodicity { region } => {
            let region = sc.region(region, ctx)?;
            let periods: Vec<Value> = runs
                .iter()
                .map(|r| json!({ "seed": r.seed, "period": periodicity(&grid_refs(r), &region) }))
                .collect();
            Ok(json!({ "periods": periods }))
        }
    }
}
