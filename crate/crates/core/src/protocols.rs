//! Input-pattern generators and between-scan interventions.

use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{unit_cell_tiling, UnitCell};
use crate::engine::{Event, Schedule, SimState};
use crate::error::{Error, Result};
use crate::lattice::{nearest_coord, site_area, CellCoord, CellState, HexGrid, Region, DIRECTIONS};
use crate::pattern::Fragment;

/// Hex radius of a gate input disc.
pub const GATE_RADIUS: i32 = 3;
/// Charged cells written into each gate input disc.
pub const GATE_CHARGED_CELLS: usize = 35;
/// Largest allowed center distance between gate inputs.
pub const GATE_MAX_SEPARATION: i32 = 15;
/// Smallest allowed center distance between gate inputs.
pub const GATE_MIN_SEPARATION: i32 = 6;

/// Write a fragment as one or more entities; nothing is written when any
/// cell is out of bounds.
pub fn write_pattern(state: &mut SimState, fragment: &Fragment) -> Result<()> {
    state.write(fragment)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InterventionKind {
    /// Switch `count` uniformly chosen state-0 cells of `region` to state 1.
    AddS1 {
        count: usize,
        region: Region,
    },
    /// Switch every state-2 cell of `region` to state 0.
    DeleteS2 {
        region: Region,
    },
    WriteFragment(Fragment),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Intervention {
    pub kind: InterventionKind,
    pub scan: u32,
}

fn check_region(grid: &HexGrid, region: &Region) -> Result<()> {
    match region.iter().find(|&c| !grid.in_bounds(c)) {
        Some(c) => Err(Error::OutOfBounds(c)),
        None => Ok(()),
    }
}

/// Apply an intervention. Returns a log message and an optional warning.
pub fn intervention_apply(
    state: &mut SimState,
    kind: &InterventionKind,
) -> Result<(String, Option<String>)> {
    match kind {
        InterventionKind::AddS1 { count, region } => {
            check_region(&state.grid, region)?;
            let free: Vec<CellCoord> = region
                .iter()
                .filter(|&c| state.grid.state(c) == CellState::S0)
                .collect();
            let k = (*count).min(free.len());
            let mut picked: Vec<usize> = index::sample(&mut state.rng, free.len(), k).into_vec();
            picked.sort_unstable();
            for i in picked {
                state.grid.set(free[i], CellState::S1)?;
                let idx = state.grid.index_of(free[i]).expect("region checked");
                state.labels[idx] = 0;
            }
            let warning =
                (k < *count).then(|| format!("only {k} of {count} state-0 cells available"));
            Ok((format!("add {k} state-1 cells"), warning))
        }
        InterventionKind::DeleteS2 { region } => {
            check_region(&state.grid, region)?;
            let mut n = 0;
            for c in region.iter() {
                if state.grid.state(c) == CellState::S2 {
                    state.grid.set(c, CellState::S0)?;
                    n += 1;
                }
            }
            Ok((format!("delete {n} state-2 cells"), None))
        }
        InterventionKind::WriteFragment(f) => {
            state.write(f)?;
            Ok((
                format!("write {} cells (charge {})", f.len(), f.charge()),
                None,
            ))
        }
    }
}

/// Placement of the two gate inputs and the output probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GateGeometry {
    pub a_center: CellCoord,
    pub b_center: CellCoord,
    pub output_center: CellCoord,
    pub radius: i32,
}

impl GateGeometry {
    /// Inputs on a horizontal line through `center`, `separation` cells apart.
    pub fn centered(grid: &HexGrid, center: CellCoord, separation: i32) -> Result<Self> {
        if !(GATE_MIN_SEPARATION..=GATE_MAX_SEPARATION).contains(&separation) {
            return Err(Error::Geometry(format!(
                "input separation {separation} outside [{GATE_MIN_SEPARATION}, {GATE_MAX_SEPARATION}]"
            )));
        }
        let a_center = center.offset(-separation / 2, 0);
        let b_center = a_center.offset(separation, 0);
        let (ax, ay) = a_center.unit_position();
        let (bx, by) = b_center.unit_position();
        let output_center = nearest_coord((ax + bx) / 2.0, (ay + by) / 2.0);
        for c in [a_center, b_center] {
            if let Some(out) = c
                .disc(GATE_RADIUS)
                .into_iter()
                .find(|&x| !grid.in_bounds(x))
            {
                return Err(Error::Geometry(format!(
                    "input disc leaves the grid at {out}"
                )));
            }
        }
        Ok(Self {
            a_center,
            b_center,
            output_center,
            radius: GATE_RADIUS,
        })
    }

    pub fn a_region(&self, grid: &HexGrid) -> Region {
        Region::disc(grid, self.a_center, self.radius)
    }

    pub fn b_region(&self, grid: &HexGrid) -> Region {
        Region::disc(grid, self.b_center, self.radius)
    }

    pub fn output_region(&self, grid: &HexGrid) -> Region {
        Region::disc(grid, self.output_center, self.radius)
    }
}

/// Random mixture of S1 and S3 over a hex disc with a fixed number of charged cells.
pub fn input_disc<R: Rng + ?Sized>(
    center: CellCoord,
    radius: i32,
    charged: usize,
    s3_share: f64,
    rng: &mut R,
) -> Fragment {
    let mut cells = center.disc(radius);
    cells.shuffle(rng);
    cells
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let s = if i >= charged {
                CellState::S0
            } else if rng.gen::<f64>() < s3_share {
                CellState::S3
            } else {
                CellState::S1
            };
            (c, s)
        })
        .collect()
}

/// AND-gate inputs: a dense random S1/S3 disc for every set bit.
pub fn make_and_inputs(
    grid: &HexGrid,
    a: bool,
    b: bool,
    separation: i32,
    seed: u64,
) -> Result<(Fragment, GateGeometry)> {
    let geom = GateGeometry::centered(grid, grid.center_cell(), separation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frag = Fragment::new();
    for (bit, center) in [(a, geom.a_center), (b, geom.b_center)] {
        let disc = input_disc(center, GATE_RADIUS, GATE_CHARGED_CELLS, 0.3, &mut rng);
        if bit {
            frag.merge(&disc);
        }
    }
    Ok((frag, geom))
}

/// Population presets for the tissue experiments: (N, initial S1 on the rings,
/// S1 added per scan).
pub const TISSUE_PRESETS: [(usize, usize, usize); 3] =
    [(286, 149, 5), (456, 196, 8), (627, 222, 11)];

/// Inner ring: cells whose center lies this far (lattice units) from the tissue center.
pub const INNER_RING: (f64, f64) = (2.5, 3.5);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TissueSpec {
    pub center: CellCoord,
    /// Outer edge of the inner ring in nm.
    pub inner_radius_nm: f64,
    /// Inner edge of the outer ring in nm.
    pub outer_radius_nm: f64,
    /// Gap between the rings in nm.
    pub separation_nm: f64,
    #[serde(skip)]
    pub cg: Region,
    pub n: usize,
    pub initial_s1: usize,
}

/// Two concentric S1 rings. The tissue region CG holds the `n_target` cells
/// nearest the center; the outer ring is its outermost band, thick enough to
/// bring the ring population to `s1_target`.
pub fn make_tissue_rings(
    grid: &HexGrid,
    n_target: usize,
    s1_target: usize,
) -> Result<(TissueSpec, Fragment)> {
    let center = grid.center_cell();
    let origin = center.unit_position();
    let dist = |c: CellCoord| {
        let p = c.unit_position();
        (p.0 - origin.0).hypot(p.1 - origin.1)
    };
    let mut order: Vec<(f64, CellCoord)> = grid.coords().map(|c| (dist(c), c)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    if n_target > order.len() {
        return Err(Error::Geometry(format!(
            "N = {n_target} exceeds the {} grid cells",
            order.len()
        )));
    }
    let cg: Vec<(f64, CellCoord)> = order[..n_target].to_vec();
    let inner: Vec<CellCoord> = cg
        .iter()
        .filter(|(d, _)| *d >= INNER_RING.0 && *d < INNER_RING.1)
        .map(|x| x.1)
        .collect();
    let inner_count = order
        .iter()
        .filter(|(d, _)| *d >= INNER_RING.0 && *d < INNER_RING.1)
        .count();
    if inner.len() != inner_count {
        return Err(Error::Geometry(format!(
            "N = {n_target} does not enclose the inner ring"
        )));
    }
    let interior = cg.iter().filter(|(d, _)| *d < INNER_RING.1).count();
    if s1_target < inner.len() || s1_target - inner.len() > n_target - interior {
        return Err(Error::Geometry(format!(
            "cannot place {s1_target} ring cells inside N = {n_target}"
        )));
    }
    let band = s1_target - inner.len();
    let outer = &cg[n_target - band..];
    let mut frag: Fragment = inner.iter().map(|&c| (c, CellState::S1)).collect();
    frag.merge(&outer.iter().map(|&(_, c)| (c, CellState::S1)).collect());
    let spacing = grid.spacing();
    let outer_edge = outer.first().map_or(INNER_RING.1, |x| x.0);
    let spec = TissueSpec {
        center,
        inner_radius_nm: INNER_RING.1 * spacing,
        outer_radius_nm: outer_edge * spacing,
        separation_nm: (outer_edge - INNER_RING.1).max(0.0) * spacing,
        cg: cg.iter().map(|x| x.1).collect(),
        n: n_target,
        initial_s1: s1_target,
    };
    Ok((spec, frag))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacketMode {
    /// Dense S3 tail behind the packet, which then travels along `direction`.
    Gradient { direction: usize },
    /// Mirror image to the east touching the packet at a single adjacency.
    Mirror,
}

fn adjacency_pairs(a: &BTreeSet<CellCoord>, b: &BTreeSet<CellCoord>) -> usize {
    a.iter()
        .map(|x| x.ring1().iter().filter(|n| b.contains(n)).count())
        .sum()
}

/// Packet plus the cells that set it in motion.
pub fn make_packet(shape: &Fragment, mode: PacketMode) -> Result<Fragment> {
    if shape.is_empty() {
        return Err(Error::Geometry("packet shape is empty".into()));
    }
    let cells: BTreeSet<CellCoord> = shape.coords().collect();
    let mut out = shape.clone();
    match mode {
        PacketMode::Gradient { direction } => {
            let (dq, dr) = *DIRECTIONS
                .get(direction)
                .ok_or_else(|| Error::Geometry(format!("direction {direction} outside 0..6")))?;
            if shape.iter().all(|(_, s)| s == CellState::S3) {
                return Err(Error::Geometry(
                    "head already has the largest possible density".into(),
                ));
            }
            for &c in &cells {
                let t = c.offset(-dq, -dr);
                if !cells.contains(&t) {
                    out.insert(t, CellState::S3);
                }
            }
        }
        PacketMode::Mirror => {
            let mirrored: Fragment = shape
                .iter()
                .map(|(c, s)| (CellCoord::new(-c.q - c.r, c.r), s))
                .collect();
            let max_q = cells.iter().map(|c| c.q).max().unwrap_or(0);
            let min_m = mirrored.coords().map(|c| c.q).min().unwrap_or(0);
            let mut shift = max_q - min_m - 2 * cells.len() as i32;
            let placed = loop {
                let cand = mirrored.translated(shift, 0);
                let set: BTreeSet<CellCoord> = cand.coords().collect();
                if set.is_disjoint(&cells)
                    && cand.coords().all(|c| {
                        c.q > cells
                            .iter()
                            .filter(|x| x.r == c.r)
                            .map(|x| x.q)
                            .max()
                            .unwrap_or(i32::MIN)
                    })
                {
                    break cand;
                }
                shift += 1;
            };
            let set: BTreeSet<CellCoord> = placed.coords().collect();
            let contacts = adjacency_pairs(&cells, &set);
            if contacts != 1 {
                return Err(Error::Geometry(format!(
                    "mirror image touches at {contacts} adjacencies, expected 1"
                )));
            }
            out.merge(&placed);
        }
    }
    Ok(out)
}

/// Straight line of alternating S3/S1 cells starting with S3.
pub fn alternating_line(start: CellCoord, direction: usize, length: usize) -> Fragment {
    let (dq, dr) = DIRECTIONS[direction % 6];
    (0..length as i32)
        .map(|i| {
            (
                start.offset(i * dq, i * dr),
                if i % 2 == 0 {
                    CellState::S3
                } else {
                    CellState::S1
                },
            )
        })
        .collect()
}

/// Charge density of the cells written by `frag` in e/nm².
pub fn fragment_density(frag: &Fragment, spacing: f64) -> f64 {
    frag.charge() as f64 / (frag.len() as f64 * site_area(spacing))
}

/// AND gate run: inputs written and evolution enabled at t = 0.
pub fn gate_schedule(inputs: Fragment, scans: u32) -> Schedule {
    Schedule::new(scans)
        .at_scan(0, Event::Write(inputs))
        .at_scan(0, Event::Trigger)
}

/// Tissue run: rings at t = 0, `per_scan` S1 added inside CG before every
/// later snapshot but the last, and optionally every S2 in CG erased before
/// each later snapshot.
pub fn tissue_schedule(
    spec: &TissueSpec,
    rings: Fragment,
    per_scan: usize,
    scans: u32,
    delete_s2: bool,
) -> Schedule {
    let mut sch = Schedule::new(scans)
        .at_scan(0, Event::Write(rings))
        .at_scan(0, Event::Trigger);
    for k in 1..=scans {
        if delete_s2 {
            sch = sch.at_scan(
                k,
                Event::Intervene(InterventionKind::DeleteS2 {
                    region: spec.cg.clone(),
                }),
            );
        }
        if k < scans {
            sch = sch.at_scan(
                k,
                Event::Intervene(InterventionKind::AddS1 {
                    count: per_scan,
                    region: spec.cg.clone(),
                }),
            );
        }
    }
    sch
}

/// Rows of the diffusion seed relative to the probe start.
pub const DIFFUSION_ROWS: [i32; 4] = [2, 3, 6, 7];
/// Cells per seed row.
pub const DIFFUSION_ROW_LEN: i32 = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffusionSetup {
    #[serde(skip)]
    pub seed: Fragment,
    /// Unit cells along Z through the middle of the seed.
    pub probe: Vec<UnitCell>,
    /// Parallel unit-cell lines across the whole seed.
    pub lines: Vec<Vec<UnitCell>>,
}

/// Two bands of two alternating S3/S1 rows each, centered on the grid and
/// running east-west, with unit-cell lines crossing them.
pub fn make_diffusion_seed(grid: &HexGrid) -> Result<DiffusionSetup> {
    let center = grid.center_cell();
    let r0 = center.r - 4;
    let mut seed = Fragment::new();
    for (l, &dr) in DIFFUSION_ROWS.iter().enumerate() {
        let r = r0 + dr;
        let q0 = center.q - DIFFUSION_ROW_LEN / 2 - (r - center.r) / 2;
        for i in 0..DIFFUSION_ROW_LEN {
            let s = if (i + l as i32) % 2 == 0 {
                CellState::S3
            } else {
                CellState::S1
            };
            seed.insert(CellCoord::new(q0 + i, r), s);
        }
    }
    seed.check_bounds(grid)?;
    let probe = unit_cell_tiling(grid, CellCoord::new(center.q, r0), 5, 10)?;
    let lines = ((center.q - 8)..=(center.q + 8))
        .filter_map(|q| unit_cell_tiling(grid, CellCoord::new(q, 1), 5, 25).ok())
        .collect::<Vec<_>>();
    if lines.is_empty() {
        return Err(Error::Geometry(
            "grid too small for the diffusion lines".into(),
        ));
    }
    Ok(DiffusionSetup { seed, probe, lines })
}

/// Horizontal bands for the Voronoi scenario, top to bottom: (rows, state).
/// Each S3 band grows its domain by one row on either side, so the bands
/// next to it are four rows wider.
pub const VORONOI_BANDS: [(i32, CellState); 4] = [
    (8, CellState::S0),
    (5, CellState::S3),
    (9, CellState::S1),
    (5, CellState::S3),
];

/// Fill whole rows band by band. Rows past the last band stay untouched.
pub fn make_bands(grid: &HexGrid, bands: &[(i32, CellState)]) -> Fragment {
    let mut frag = Fragment::new();
    let mut row = 0;
    for &(rows, state) in bands {
        for r in row..(row + rows).min(grid.height() as i32) {
            for col in 0..grid.width() as i32 {
                frag.insert(CellCoord::from_offset(col, r), state);
            }
        }
        row += rows;
    }
    frag
}

/// S1 shares of the two density-classification patterns, as (k, period):
/// a cell is S1 when `(col + 2·row) mod period < k`.
pub const DENSITY_PATTERNS: [(i32, i32); 2] = [(5, 9), (4, 9)];

/// Left half written with the denser pattern, right half with the sparser
/// one. Returns the fragment and the two written halves.
pub fn make_density_pair(grid: &HexGrid) -> (Fragment, Region, Region) {
    let half = grid.width() as i32 / 2;
    let mut frag = Fragment::new();
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for c in grid.coords() {
        let (col, row) = c.to_offset();
        let (k, period) = if col < half {
            DENSITY_PATTERNS[0]
        } else {
            DENSITY_PATTERNS[1]
        };
        if (col + 2 * row).rem_euclid(period) < k {
            frag.insert(c, CellState::S1);
        }
        if col < half {
            left.push(c)
        } else {
            right.push(c)
        }
    }
    (
        frag,
        Region::clipped(grid, left),
        Region::clipped(grid, right),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{SimConfig, SimState};
    use proptest::prelude::*;

    fn grid() -> HexGrid {
        HexGrid::new(24, 27, 0.98).unwrap()
    }

    #[test]
    fn six_by_seven_write() {
        let mut s = SimState::new(grid(), &SimConfig::default()).unwrap();
        let f: Fragment = (0..7)
            .flat_map(|row| {
                (0..6).map(move |col| (CellCoord::from_offset(col + 3, row + 4), CellState::S1))
            })
            .collect();
        write_pattern(&mut s, &f).unwrap();
        assert_eq!(s.grid.count(CellState::S1), 42);
    }

    #[test]
    fn last_write_wins() {
        let mut s = SimState::new(grid(), &SimConfig::default()).unwrap();
        let c = CellCoord::from_offset(2, 2);
        write_pattern(&mut s, &[(c, CellState::S1)].into_iter().collect()).unwrap();
        write_pattern(&mut s, &[(c, CellState::S3)].into_iter().collect()).unwrap();
        assert_eq!(s.grid.state(c), CellState::S3);
    }

    #[test]
    fn gate_inputs() {
        let g = grid();
        let (f, geom) = make_and_inputs(&g, true, false, 12, 3).unwrap();
        assert_eq!(f.len(), 37);
        assert_eq!(
            f.coords()
                .filter(|&c| f.get(c).unwrap().is_charged())
                .count(),
            35
        );
        assert_eq!(geom.a_center.dist(geom.b_center), 12);
        assert!(make_and_inputs(&g, false, false, 12, 3)
            .unwrap()
            .0
            .is_empty());
        assert!(matches!(
            make_and_inputs(&g, true, true, 16, 3),
            Err(Error::Geometry(_))
        ));
        assert!(matches!(
            make_and_inputs(&g, true, true, 5, 3),
            Err(Error::Geometry(_))
        ));
    }

    proptest! {
        #[test]
        fn gate_disc_density_above_half(seed in any::<u64>(), dx in 0.93f64..=1.03) {
            let g = HexGrid::new(24, 27, dx).unwrap();
            let (f, _) = make_and_inputs(&g, true, false, 10, seed).unwrap();
            prop_assert!(fragment_density(&f, dx) > 0.5);
        }
    }

    #[test]
    fn tissue_presets() {
        let g = grid();
        let mut inner_rings = Vec::new();
        let mut gaps = Vec::new();
        for (n, s1, _) in TISSUE_PRESETS {
            let (spec, frag) = make_tissue_rings(&g, n, s1).unwrap();
            assert_eq!(spec.cg.len(), n);
            assert_eq!(frag.len(), s1);
            let mut t = g.clone();
            frag.apply(&mut t).unwrap();
            let n_count = spec
                .cg
                .iter()
                .filter(|&c| matches!(t.state(c), CellState::S0 | CellState::S1))
                .count();
            assert_eq!(n_count, n);
            assert!(
                spec.cg
                    .iter()
                    .filter(|&c| t.state(c) == CellState::S1)
                    .count()
                    == s1
            );
            let inner: Vec<_> = frag.coords().filter(|c| c.dist(spec.center) <= 4).collect();
            inner_rings.push(inner);
            gaps.push(spec.separation_nm);
        }
        assert!(inner_rings.windows(2).all(|w| w[0] == w[1]));
        assert!(gaps.windows(2).all(|w| w[0] < w[1]), "{gaps:?}");
        assert!(make_tissue_rings(&g, 700, 200).is_err());
    }

    #[test]
    fn add_s1_and_delete_s2() {
        let mut s = SimState::new(grid(), &SimConfig::default()).unwrap();
        let region = Region::disc(&s.grid, s.grid.center_cell(), 3);
        let q0 = s.grid.total_charge();
        let (_, warn) = intervention_apply(
            &mut s,
            &InterventionKind::AddS1 {
                count: 5,
                region: region.clone(),
            },
        )
        .unwrap();
        assert_eq!(s.grid.total_charge(), q0 + 5);
        assert!(warn.is_none());
        let before = s.grid.clone();
        intervention_apply(
            &mut s,
            &InterventionKind::DeleteS2 {
                region: region.clone(),
            },
        )
        .unwrap();
        assert_eq!(s.grid, before);
        let (_, warn) =
            intervention_apply(&mut s, &InterventionKind::AddS1 { count: 40, region }).unwrap();
        assert!(warn.is_some());
        assert_eq!(s.grid.total_charge(), q0 + 37);
    }

    #[test]
    fn mirror_of_l_shape_touches_once() {
        let l: Fragment = [(5, 5), (6, 5), (5, 6)]
            .iter()
            .map(|&(q, r)| (CellCoord::new(q, r), CellState::S1))
            .collect();
        let out = make_packet(&l, PacketMode::Mirror).unwrap();
        assert_eq!(out.len(), 6);
        let a: BTreeSet<_> = l.coords().collect();
        let b: BTreeSet<_> = out.coords().filter(|c| !a.contains(c)).collect();
        assert_eq!(adjacency_pairs(&a, &b), 1);
    }

    #[test]
    fn gradient_tail_is_denser() {
        let head: Fragment = [
            (5, 5, CellState::S1),
            (6, 5, CellState::S3),
            (5, 6, CellState::S1),
        ]
        .iter()
        .map(|&(q, r, s)| (CellCoord::new(q, r), s))
        .collect();
        let out = make_packet(&head, PacketMode::Gradient { direction: 0 }).unwrap();
        let tail: Fragment = out.iter().filter(|(c, _)| head.get(*c).is_none()).collect();
        assert!(!tail.is_empty());
        assert!(fragment_density(&tail, 1.0) > fragment_density(&head, 1.0));
    }

    #[test]
    fn alternating_seed_line() {
        let f = alternating_line(CellCoord::new(2, 3), 0, 5);
        let states: Vec<_> = f.iter().map(|(_, s)| s).collect();
        assert_eq!(
            states,
            vec![
                CellState::S3,
                CellState::S1,
                CellState::S3,
                CellState::S1,
                CellState::S3
            ]
        );
    }
}
