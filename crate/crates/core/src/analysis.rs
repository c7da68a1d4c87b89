//! Quantitative pipelines over recorded trajectories: flux and diffusion
//! estimates, flux-profile fits, tumor kinetics and gate/periodicity readouts.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{
    charge_density, excess_charge, flower_area, CellCoord, CellState, HexGrid, Region, DIRECTIONS,
};
use crate::protocols::GateGeometry;

/// Ratio between the non-overlapping area of two neighboring unit cells and
/// the unit-cell area.
pub const UC_FACTOR: f64 = 1.3;

/// Seven-molecule hexagonal flower used as the flux unit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitCell {
    pub center: CellCoord,
    pub members: [CellCoord; 7],
    pub area_nm2: f64,
    pub z: usize,
}

/// Overlapping flowers centered on consecutive cells of a straight line.
pub fn unit_cell_tiling(
    grid: &HexGrid,
    start: CellCoord,
    direction: usize,
    count: usize,
) -> Result<Vec<UnitCell>> {
    if count < 2 {
        return Err(Error::Geometry(
            "a line needs at least two unit cells".into(),
        ));
    }
    let (dq, dr) = *DIRECTIONS
        .get(direction)
        .ok_or_else(|| Error::Geometry(format!("bad direction {direction}")))?;
    let area = flower_area(grid.spacing());
    (0..count)
        .map(|z| {
            let center = start.offset(z as i32 * dq, z as i32 * dr);
            let mut members = [center; 7];
            members[1..].copy_from_slice(&center.ring1());
            match members.iter().find(|&&m| !grid.in_bounds(m)) {
                Some(m) => Err(Error::Geometry(format!(
                    "unit cell {z} leaves the grid at {m}"
                ))),
                None => Ok(UnitCell {
                    center,
                    members,
                    area_nm2: area,
                    z,
                }),
            }
        })
        .collect()
}

/// Flux φ = Q/A of every unit cell.
pub fn flux_field(grid: &HexGrid, cells: &[UnitCell]) -> Vec<f64> {
    cells
        .iter()
        .map(|u| {
            u.members
                .iter()
                .map(|&m| grid.state(m).charge() as f64)
                .sum::<f64>()
                / u.area_nm2
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FluxSample {
    pub z: usize,
    /// Index of the earlier snapshot of the pair.
    pub snapshot: usize,
    pub phi: f64,
    /// Second difference of φ over Z divided once by UC.
    pub curvature: f64,
    /// Δφ/Δt in e/nm²/min.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares `y = slope·x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return LinearFit {
            slope: 0.0,
            intercept: my,
            r2: 0.0,
        };
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        0.0
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    LinearFit {
        slope,
        intercept: my - slope * mx,
        r2,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffusionFit {
    pub d: f64,
    pub r2: f64,
    pub intercept: f64,
    pub samples: Vec<FluxSample>,
}

/// Flux profiles indexed `[snapshot][unit cell]`.
pub type FluxSeries = Vec<Vec<f64>>;

/// Flux profile of every snapshot of one trajectory.
pub fn flux_series(grids: &[&HexGrid], cells: &[UnitCell]) -> FluxSeries {
    grids.iter().map(|g| flux_field(g, cells)).collect()
}

/// Seed-averaged flux profiles. All runs must have the same snapshot count.
pub fn mean_flux_series(runs: &[Vec<&HexGrid>], cells: &[UnitCell]) -> Result<FluxSeries> {
    let Some(first) = runs.first() else {
        return Err(Error::InsufficientData("no runs".into()));
    };
    if runs.iter().any(|r| r.len() != first.len()) {
        return Err(Error::InsufficientData(
            "runs differ in snapshot count".into(),
        ));
    }
    let mut mean = vec![vec![0.0; cells.len()]; first.len()];
    for run in runs {
        for (m, g) in mean.iter_mut().zip(run) {
            for (acc, v) in m.iter_mut().zip(flux_field(g, cells)) {
                *acc += v / runs.len() as f64;
            }
        }
    }
    Ok(mean)
}

/// Interior (curvature, rate) samples for every consecutive snapshot pair.
pub fn flux_samples(series: &FluxSeries, cells: &[UnitCell], dt_s: f64) -> Vec<FluxSample> {
    let dt_min = dt_s / 60.0;
    let mut out = Vec::new();
    for k in 0..series.len().saturating_sub(1) {
        let (now, next) = (&series[k], &series[k + 1]);
        for i in 1..cells.len().saturating_sub(1) {
            let uc = UC_FACTOR * cells[i].area_nm2;
            let right = (now[i + 1] - now[i]) / uc;
            let left = (now[i] - now[i - 1]) / uc;
            out.push(FluxSample {
                z: cells[i].z,
                snapshot: k,
                phi: now[i],
                curvature: right - left,
                rate: (next[i] - now[i]) / dt_min,
            });
        }
    }
    out
}

pub fn diffusion_samples(grids: &[&HexGrid], cells: &[UnitCell], dt_s: f64) -> Vec<FluxSample> {
    flux_samples(&flux_series(grids, cells), cells, dt_s)
}

/// Slope of rate against curvature pooled over several lines, each given as
/// its flux series and unit cells.
pub fn fit_diffusion(lines: &[(FluxSeries, Vec<UnitCell>)], dt_s: f64) -> Result<DiffusionFit> {
    let mut samples = Vec::new();
    for (series, cells) in lines {
        if series.len() < 2 || cells.len() < 3 {
            return Err(Error::InsufficientData(
                "need at least 2 snapshots and 3 unit cells".into(),
            ));
        }
        samples.extend(flux_samples(series, cells, dt_s));
    }
    if samples.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} samples",
            samples.len()
        )));
    }
    let x: Vec<f64> = samples.iter().map(|s| s.curvature).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.rate).collect();
    let fit = linear_fit(&x, &y);
    Ok(DiffusionFit {
        d: fit.slope,
        r2: fit.r2,
        intercept: fit.intercept,
        samples,
    })
}

/// Slope of rate against curvature over all interior samples of one trajectory.
pub fn diffusion_fit(grids: &[&HexGrid], cells: &[UnitCell], dt_s: f64) -> Result<DiffusionFit> {
    fit_diffusion(&[(flux_series(grids, cells), cells.to_vec())], dt_s)
}

/// Weighted (1,2,1)/4 average over Z at interior positions; the ends are kept.
pub fn smooth_profile(phi: &[f64]) -> Vec<f64> {
    (0..phi.len())
        .map(|i| {
            if i == 0 || i + 1 == phi.len() {
                phi[i]
            } else {
                (phi[i - 1] + 2.0 * phi[i] + phi[i + 1]) / 4.0
            }
        })
        .collect()
}

/// Parameters of `(a/√t)·exp(−(Z−z0)²/(b·t))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileModel {
    pub a: f64,
    pub z0: f64,
    pub b: f64,
}

impl ProfileModel {
    pub fn eval(&self, z: f64, t_min: f64) -> f64 {
        self.a / t_min.sqrt() * (-(z - self.z0).powi(2) / (self.b * t_min)).exp()
    }

    fn gradient(&self, z: f64, t: f64) -> [f64; 3] {
        let e = (-(z - self.z0).powi(2) / (self.b * t)).exp();
        let f = self.a / t.sqrt() * e;
        [
            e / t.sqrt(),
            f * 2.0 * (z - self.z0) / (self.b * t),
            f * (z - self.z0).powi(2) / (self.b * self.b * t),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileFit {
    pub model: ProfileModel,
    /// Root-mean-square residual.
    pub residual: f64,
    /// Time (s) from which the smoothed profile stops changing by the tolerance.
    pub saturation_s: Option<f64>,
}

/// Points `(Z, t_min, φ)` used by the profile fit.
pub type ProfilePoint = (f64, f64, f64);

fn solve3(m: [[f64; 3]; 3], v: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(m);
    if d.abs() < 1e-300 || !d.is_finite() {
        return None;
    }
    let mut out = [0.0; 3];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut mk = m;
        for r in 0..3 {
            mk[r][k] = v[r];
        }
        *slot = det(mk) / d;
    }
    Some(out)
}

fn sse(model: &ProfileModel, pts: &[ProfilePoint]) -> f64 {
    pts.iter()
        .map(|&(z, t, y)| (model.eval(z, t) - y).powi(2))
        .sum()
}

/// Levenberg-Marquardt fit of the spreading-profile model.
pub fn fit_profile_model(pts: &[ProfilePoint], start: ProfileModel) -> Result<(ProfileModel, f64)> {
    if pts.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} profile points",
            pts.len()
        )));
    }
    let mut model = start;
    let mut cost = sse(&model, pts);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for &(z, t, y) in pts {
            let g = model.gradient(z, t);
            let r = y - model.eval(z, t);
            for i in 0..3 {
                jtr[i] += g[i] * r;
                for j in 0..3 {
                    jtj[i][j] += g[i] * g[j];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut m = jtj;
            for (i, row) in m.iter_mut().enumerate() {
                row[i] += lambda * jtj[i][i].max(1e-12);
            }
            if let Some(step) = solve3(m, jtr) {
                let trial = ProfileModel {
                    a: model.a + step[0],
                    z0: model.z0 + step[1],
                    b: model.b + step[2],
                };
                if trial.b > 0.0 {
                    let c = sse(&trial, pts);
                    if c.is_finite() && c <= cost {
                        let done = (cost - c) <= 1e-15 * cost.max(1e-300)
                            && step.iter().all(|s| s.abs() < 1e-12);
                        model = trial;
                        cost = c;
                        lambda = (lambda / 10.0).max(1e-12);
                        improved = !done;
                        break;
                    }
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    if !(model.a.is_finite() && model.z0.is_finite() && model.b.is_finite()) {
        return Err(Error::Fit("profile fit diverged".into()));
    }
    Ok((model, (cost / pts.len() as f64).sqrt()))
}

/// Smooth every snapshot profile and fit the spreading model. Snapshots at
/// t = 0 and the two end cells are left out of the fit.
pub fn profile_fit(
    series: &FluxSeries,
    times_s: &[f64],
    cells: &[UnitCell],
    saturation_tol: f64,
) -> Result<ProfileFit> {
    if series.len() < 3 || series.len() != times_s.len() || cells.len() < 3 {
        return Err(Error::InsufficientData(
            "need at least 3 snapshots with times and 3 unit cells".into(),
        ));
    }
    let profiles: Vec<Vec<f64>> = series.iter().map(|p| smooth_profile(p)).collect();
    let mut pts = Vec::new();
    for (p, &t) in profiles.iter().zip(times_s) {
        if t <= 0.0 {
            continue;
        }
        for (i, &y) in p.iter().enumerate().take(cells.len() - 1).skip(1) {
            pts.push((cells[i].z as f64, t / 60.0, y));
        }
    }
    let total: f64 = pts.iter().map(|p| p.2).sum();
    if total <= 0.0 {
        return Err(Error::Fit("flux profile is identically zero".into()));
    }
    let z0 = pts.iter().map(|p| p.0 * p.2).sum::<f64>() / total;
    let (zt, tt) = pts.iter().fold((0.0, 0.0), |acc, p| {
        (acc.0 + (p.0 - z0).powi(2) * p.2, acc.1 + p.1 * p.2)
    });
    let b = (2.0 * zt / tt).max(0.1);
    let a = pts.iter().map(|p| p.2 * p.1.sqrt()).fold(0.0, f64::max);
    let (model, residual) = fit_profile_model(&pts, ProfileModel { a, z0, b })?;
    Ok(ProfileFit {
        model,
        residual,
        saturation_s: saturation_time(&profiles, times_s, saturation_tol),
    })
}

/// Earliest snapshot after which no later pair of consecutive profiles
/// differs anywhere by `tol` or more.
pub fn saturation_time(profiles: &[Vec<f64>], times_s: &[f64], tol: f64) -> Option<f64> {
    let change: Vec<f64> = profiles
        .windows(2)
        .map(|w| {
            w[1].iter()
                .zip(&w[0])
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let mut k = change.len();
    while k > 0 && change[k - 1] < tol {
        k -= 1;
    }
    (k < change.len() && k >= 1).then(|| times_s[k])
}

pub fn flux_profile_fit(
    grids: &[&HexGrid],
    times_s: &[f64],
    cells: &[UnitCell],
    saturation_tol: f64,
) -> Result<ProfileFit> {
    profile_fit(&flux_series(grids, cells), times_s, cells, saturation_tol)
}

/// Two-step mutation model: normal (0) → one hit (1) → two hits (3).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CancerParams {
    /// Per-minute rate of the first hit.
    pub u1: f64,
    /// Per-minute rate of the second hit.
    pub u2: f64,
    /// Initial effective normal population.
    pub x0_0: f64,
}

impl CancerParams {
    pub fn neff(&self) -> f64 {
        2.0 * self.x0_0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CancerState {
    pub x0: f64,
    pub x1: f64,
    pub x3: f64,
}

/// Closed-form solution of the linear two-hit chain at `t` minutes.
pub fn cancer_closed_form(p: &CancerParams, t: f64) -> Result<CancerState> {
    if !(p.u1 > 0.0 && p.u2 > 0.0) {
        return Err(Error::Config("u1 and u2 must be positive".into()));
    }
    if t < 0.0 {
        return Err(Error::Config(format!("negative time {t}")));
    }
    let k = p.neff() * p.u2;
    let diff = k - p.u1;
    if diff.abs() <= 1e-12 * k.max(p.u1) {
        return Err(Error::DegenerateRates(k));
    }
    let x0 = p.x0_0 * (-p.u1 * t).exp();
    let x1 = p.x0_0 * p.u1 * (-p.u1 * t).exp() * -(-diff * t).exp_m1() / diff;
    let x3 = p.x0_0 * (-k * (-p.u1 * t).exp_m1() + p.u1 * (-k * t).exp_m1()) / diff;
    Ok(CancerState { x0, x1, x3 })
}

/// Least-squares u2 for an observed cumulative S3 series with u1 and X0(0) fixed.
pub fn fit_u2(series: &[f64], times_min: &[f64], u1: f64, x0_0: f64) -> Result<f64> {
    if series.len() < 2 || series.len() != times_min.len() {
        return Err(Error::InsufficientData(
            "need at least two timed points".into(),
        ));
    }
    let cost = |log_u2: f64| -> f64 {
        let p = CancerParams {
            u1,
            u2: log_u2.exp(),
            x0_0,
        };
        series
            .iter()
            .zip(times_min)
            .map(|(&y, &t)| match cancer_closed_form(&p, t) {
                Ok(s) => (s.x3 - y).powi(2),
                Err(_) => f64::INFINITY,
            })
            .sum()
    };
    let (mut lo, mut hi) = ((1e-9f64).ln(), (1.0f64).ln());
    let grid: Vec<f64> = (0..=200)
        .map(|i| lo + (hi - lo) * i as f64 / 200.0)
        .collect();
    let best = grid
        .iter()
        .copied()
        .min_by(|a, b| cost(*a).total_cmp(&cost(*b)))
        .unwrap_or(lo);
    let step = (hi - lo) / 200.0;
    lo = best - step;
    hi = best + step;
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        if cost(a) <= cost(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Cumulative count of cells inside `cg` that are S3 in a snapshot but not in
/// the one before, one entry per consecutive pair.
pub fn n3_series(grids: &[&HexGrid], cg: &Region) -> Vec<u64> {
    let mut total = 0;
    grids
        .windows(2)
        .map(|w| {
            total += cg
                .iter()
                .filter(|&c| w[1].state(c) == CellState::S3 && w[0].state(c) != CellState::S3)
                .count() as u64;
            total
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KineticsFit {
    /// Prefactor with time in minutes.
    pub c: f64,
    pub p: f64,
    /// Time for the cumulative count to double from its first nonzero value.
    pub t_half_s: Option<f64>,
}

/// Power-law fit `N3 ≈ c·t^p` on log-log axes plus the doubling time.
pub fn kinetics_fit(series: &[f64], times_s: &[f64]) -> Result<KineticsFit> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .zip(times_s)
        .filter(|(&n, &t)| n > 0.0 && t > 0.0)
        .map(|(&n, &t)| ((t / 60.0).ln(), n.ln()))
        .collect();
    if pts.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} nonzero points, need 4",
            pts.len()
        )));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let fit = linear_fit(&x, &y);
    Ok(KineticsFit {
        c: fit.intercept.exp(),
        p: fit.slope,
        t_half_s: doubling_time(series, times_s),
    })
}

/// Interpolated time for the series to reach twice its first nonzero value.
pub fn doubling_time(series: &[f64], times_s: &[f64]) -> Option<f64> {
    let start = series.iter().position(|&n| n > 0.0)?;
    let target = 2.0 * series[start];
    for i in start + 1..series.len() {
        if series[i] >= target {
            let (n0, n1) = (series[i - 1], series[i]);
            let (t0, t1) = (times_s[i - 1], times_s[i]);
            let t = if n1 == n0 {
                t1
            } else {
                t0 + (target - n0) / (n1 - n0) * (t1 - t0)
            };
            return Some(t - times_s[start]);
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateReadout {
    pub bit: bool,
    pub output_density: f64,
    /// Share of each written input's charge still inside its disc; `None`
    /// for an absent input.
    pub retention_a: Option<f64>,
    pub retention_b: Option<f64>,
    pub density_a: f64,
    pub density_b: f64,
}

/// Charge density (e/nm²) above which a gate disc holds a composition.
pub const GATE_DENSITY_THRESHOLD: f64 = 0.5;

/// Largest share of an input's charge that may stay in its disc for a 1.
pub const GATE_RETENTION_MAX: f64 = 0.5;

/// Output bit: dense composition at the midpoint and both written inputs
/// largely vacated.
pub fn gate_readout(initial: &HexGrid, last: &HexGrid, geom: &GateGeometry) -> GateReadout {
    let out = geom.output_region(last);
    let output_density = charge_density(last, &out).unwrap_or(0.0);
    let retention = |region: &Region| {
        let q0 = excess_charge(initial, region);
        (q0 > 0).then(|| excess_charge(last, region) as f64 / q0 as f64)
    };
    let (ra, rb) = (geom.a_region(last), geom.b_region(last));
    let retention_a = retention(&ra);
    let retention_b = retention(&rb);
    let moved = [retention_a, retention_b]
        .iter()
        .flatten()
        .all(|&r| r < GATE_RETENTION_MAX);
    let any_input = retention_a.is_some() || retention_b.is_some();
    GateReadout {
        bit: any_input && moved && output_density > GATE_DENSITY_THRESHOLD,
        output_density,
        retention_a,
        retention_b,
        density_a: charge_density(last, &ra).unwrap_or(0.0),
        density_b: charge_density(last, &rb).unwrap_or(0.0),
    }
}

/// Smallest period of the region's content over the trailing snapshots.
pub fn periodicity(grids: &[&HexGrid], region: &Region) -> Option<usize> {
    let len = grids.len();
    if len < 4 {
        return None;
    }
    let view = |g: &HexGrid| region.iter().map(|c| g.state(c)).collect::<Vec<_>>();
    let views: Vec<_> = grids.iter().map(|g| view(g)).collect();
    (1..=len / 2).find(|&p| {
        let start = len - (2 * p).max(len / 2);
        (start..len - p).all(|k| views[k] == views[k + p])
    })
}
