//! Circuit classification, domain segmentation and Voronoi decomposition.
//!
//! Every cell is classified from the state histogram of the hex window around
//! it. Connected cells of equal circuit type form a domain; domains are ranked
//! by area (largest first), which fixes the order in which rule sets run.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{histogram, site_area, CellCoord, CellState, HexGrid, Histogram, Region};

/// Circuit type id, 1..=8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CircuitType(u8);

impl CircuitType {
    pub fn new(id: u8) -> Result<Self> {
        if (1..=8).contains(&id) {
            Ok(Self(id))
        } else {
            Err(Error::Config(format!("unknown circuit type {id}")))
        }
    }

    pub fn id(self) -> u8 {
        self.0
    }

    fn slot(self) -> usize {
        self.0 as usize - 1
    }
}

/// Rule id, 1..=6 (rule 7 is the ordering itself).
pub type RuleId = u8;

/// Classification thresholds (percentages) and per-type tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CircuitConfig {
    /// Radius of the hex classification window (2 gives 19 cells).
    pub window_radius: i32,
    /// S3 share strictly above this gives type 5.
    pub type5_s3_above: f64,
    /// S1 share strictly above this gives type 1.
    pub type1_s1_above: f64,
    /// S2 share at or above this gives type 2.
    pub type2_s2_at_least: f64,
    /// S0 share at or above this gives type 7.
    pub type7_s0_at_least: f64,
    /// S1 share strictly above this (and not type 1) gives type 4.
    pub type4_s1_above: f64,
    /// S2 share at or above this (and not type 2) gives type 3.
    pub type3_s2_at_least: f64,
    /// S3 share strictly above this (and not type 5) gives type 6.
    pub type6_s3_above: f64,
    /// Neighborhood degree for types 1..=8.
    pub degrees: [u8; 8],
    /// Rule priority lists for types 1..=8, highest priority first.
    pub priorities: [Vec<RuleId>; 8],
}

impl Default for CircuitConfig {
    fn default() -> Self {
        let charged_first = vec![3, 1, 2, 4, 5, 6];
        let plain = vec![1, 2, 3, 4, 5, 6];
        Self {
            window_radius: 2,
            type5_s3_above: 30.0,
            type1_s1_above: 50.0,
            type2_s2_at_least: 60.0,
            type7_s0_at_least: 60.0,
            type4_s1_above: 30.0,
            type3_s2_at_least: 40.0,
            type6_s3_above: 15.0,
            degrees: [6, 4, 3, 5, 6, 3, 6, 2],
            priorities: [
                charged_first.clone(),
                plain.clone(),
                plain.clone(),
                plain.clone(),
                charged_first.clone(),
                plain.clone(),
                charged_first,
                plain,
            ],
        }
    }
}

impl CircuitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_radius < 1 {
            return Err(Error::Config("window_radius must be at least 1".into()));
        }
        for (i, &d) in self.degrees.iter().enumerate() {
            if !(2..=6).contains(&d) {
                return Err(Error::Config(format!(
                    "degree {d} of circuit {} outside 2..=6",
                    i + 1
                )));
            }
        }
        for (i, list) in self.priorities.iter().enumerate() {
            let mut seen = [false; 7];
            for &r in list {
                if !(1..=6).contains(&r) || seen[r as usize] {
                    return Err(Error::Config(format!(
                        "bad priority list {list:?} for circuit {}",
                        i + 1
                    )));
                }
                seen[r as usize] = true;
            }
        }
        Ok(())
    }

    pub fn degree(&self, t: CircuitType) -> u8 {
        self.degrees[t.slot()]
    }

    /// Rule ids in execution priority for circuit type `id`.
    pub fn rule_priority(&self, id: u8) -> Result<&[RuleId]> {
        let t = CircuitType::new(id)?;
        Ok(&self.priorities[t.slot()])
    }

    /// Rank of `rule` within the priority list of `t`; unlisted rules rank last.
    pub fn rule_rank(&self, t: CircuitType, rule: RuleId) -> usize {
        let list = &self.priorities[t.slot()];
        list.iter().position(|&r| r == rule).unwrap_or(list.len())
    }

    /// Map a window histogram onto a circuit type. Precedence: S3, S1, S2, S0,
    /// then the secondary bands for types 4, 3, 6 and finally 8.
    pub fn classify(&self, hist: &Histogram) -> CircuitType {
        let total = hist.total();
        if total == 0 {
            return CircuitType(7);
        }
        let total = total as f64;
        let pct = |s: CellState| hist.get(s) as f64 * 100.0;
        let id = if pct(CellState::S3) > self.type5_s3_above * total {
            5
        } else if pct(CellState::S1) > self.type1_s1_above * total {
            1
        } else if pct(CellState::S2) >= self.type2_s2_at_least * total {
            2
        } else if pct(CellState::S0) >= self.type7_s0_at_least * total {
            7
        } else if pct(CellState::S1) > self.type4_s1_above * total {
            4
        } else if pct(CellState::S2) >= self.type3_s2_at_least * total {
            3
        } else if pct(CellState::S3) > self.type6_s3_above * total {
            6
        } else {
            8
        };
        CircuitType(id)
    }
}

/// Classify a window histogram. `window_area_nm2` is carried for reporting;
/// thresholds act on state shares.
pub fn classify_window(
    config: &CircuitConfig,
    hist: &Histogram,
    _window_area_nm2: f64,
) -> CircuitType {
    config.classify(hist)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Domain {
    pub circuit: CircuitType,
    #[serde(skip)]
    pub region: Region,
    pub cells: usize,
    pub area_nm2: f64,
    /// Smallest member in `(r, q)` order.
    pub anchor: CellCoord,
}

/// Per-cell circuit types and the domains they form.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitMap {
    width: usize,
    cell_types: Vec<CircuitType>,
    domain_of: Vec<usize>,
    pub domains: Vec<Domain>,
}

impl CircuitMap {
    fn index(&self, grid: &HexGrid, c: CellCoord) -> usize {
        debug_assert_eq!(grid.width(), self.width);
        grid.index_of(c).expect("coordinate in bounds")
    }

    pub fn circuit_at(&self, grid: &HexGrid, c: CellCoord) -> CircuitType {
        self.cell_types[self.index(grid, c)]
    }

    /// Rank (index into `domains`) of the domain holding `c`.
    pub fn domain_at(&self, grid: &HexGrid, c: CellCoord) -> usize {
        self.domain_of[self.index(grid, c)]
    }

    pub fn cell_types(&self) -> &[CircuitType] {
        &self.cell_types
    }

    pub fn domain_ranks(&self) -> &[usize] {
        &self.domain_of
    }
}

/// Classify every cell from its window and split the grid into connected
/// domains of equal type, ordered by area descending then anchor `(r, q)`.
pub fn segment_domains(grid: &HexGrid, config: &CircuitConfig) -> CircuitMap {
    let n = grid.len();
    let radius = config.window_radius;
    let cell_types: Vec<CircuitType> = (0..n)
        .map(|i| {
            let c = grid.coord_of(i);
            let mut h = [0usize; 4];
            for w in c.disc(radius) {
                if let Some(s) = grid.get(w) {
                    h[s.index()] += 1;
                }
            }
            config.classify(&Histogram(h))
        })
        .collect();
    CircuitMap::from_cell_types(grid, cell_types).expect("one type per cell")
}

impl CircuitMap {
    /// Domains of a given per-cell type assignment, ordered as in
    /// [`segment_domains`].
    pub fn from_cell_types(grid: &HexGrid, cell_types: Vec<CircuitType>) -> Result<Self> {
        let n = grid.len();
        if cell_types.len() != n {
            return Err(Error::Geometry(format!(
                "{} cell types for {n} cells",
                cell_types.len()
            )));
        }
        Ok(Self::build(grid, cell_types))
    }

    fn build(grid: &HexGrid, cell_types: Vec<CircuitType>) -> Self {
        let n = grid.len();
        let mut label = vec![usize::MAX; n];
        let mut comps: Vec<(CircuitType, Vec<CellCoord>)> = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let t = cell_types[start];
            let mut members = Vec::new();
            label[start] = id;
            queue.push_back(start);
            while let Some(i) = queue.pop_front() {
                let c = grid.coord_of(i);
                members.push(c);
                for nb in grid.neighbors6(c) {
                    let j = grid.index_of(nb).expect("in bounds");
                    if label[j] == usize::MAX && cell_types[j] == t {
                        label[j] = id;
                        queue.push_back(j);
                    }
                }
            }
            members.sort();
            comps.push((t, members));
        }

        let mut order: Vec<usize> = (0..comps.len()).collect();
        order.sort_by(|&a, &b| {
            comps[b]
                .1
                .len()
                .cmp(&comps[a].1.len())
                .then(comps[a].1[0].cmp(&comps[b].1[0]))
        });
        let mut rank_of = vec![0usize; comps.len()];
        for (rank, &id) in order.iter().enumerate() {
            rank_of[id] = rank;
        }
        let site = site_area(grid.spacing());
        let mut slots: Vec<Option<Domain>> = vec![None; comps.len()];
        for (id, (t, members)) in comps.into_iter().enumerate() {
            let cells = members.len();
            slots[rank_of[id]] = Some(Domain {
                circuit: t,
                anchor: members[0],
                region: members.into_iter().collect(),
                cells,
                area_nm2: cells as f64 * site,
            });
        }
        CircuitMap {
            width: grid.width(),
            cell_types,
            domain_of: label.into_iter().map(|id| rank_of[id]).collect(),
            domains: slots
                .into_iter()
                .map(|d| d.expect("every rank filled"))
                .collect(),
        }
    }
}

/// Generator point of one domain, in nm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VoronoiPoint {
    pub x: f64,
    pub y: f64,
    pub domain: usize,
}

/// One generator per domain: the charge-weighted centroid when the domain
/// holds charge, the geometric centroid otherwise.
pub fn voronoi_generators(grid: &HexGrid, map: &CircuitMap) -> Vec<VoronoiPoint> {
    let spacing = grid.spacing();
    map.domains
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let q: u32 = d.region.iter().map(|c| grid.state(c).charge()).sum();
            let (mut sx, mut sy, mut w) = (0.0, 0.0, 0.0);
            for c in d.region.iter() {
                let weight = if q > 0 {
                    grid.state(c).charge() as f64
                } else {
                    1.0
                };
                let (x, y) = c.position(spacing);
                sx += weight * x;
                sy += weight * y;
                w += weight;
            }
            VoronoiPoint {
                x: sx / w,
                y: sy / w,
                domain: i,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VoronoiReport {
    /// Largest boundary asymmetry, in lattice spacings.
    pub max_asymmetry: f64,
    /// Mean boundary asymmetry, in lattice spacings.
    pub mean_asymmetry: f64,
    /// Number of boundary edges examined.
    pub boundary_edges: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum VoronoiCheck {
    Report(VoronoiReport),
    NotApplicable,
}

/// Measure how far domain boundaries sit from the bisectors of their
/// generators. Every pair of adjacent cells in different domains is one
/// boundary sample, evaluated at the shared edge midpoint: the sample is
/// `|d(m, g_a) - d(m, g_b)|` for the generators of the two domains.
pub fn voronoi_check(
    grid: &HexGrid,
    map: &CircuitMap,
    points: &[VoronoiPoint],
) -> Result<VoronoiCheck> {
    if map.domains.len() < 2 {
        return Ok(VoronoiCheck::NotApplicable);
    }
    let generator = |domain: usize| {
        points
            .iter()
            .find(|p| p.domain == domain)
            .ok_or_else(|| Error::Geometry(format!("no generator for domain {domain}")))
    };
    let spacing = grid.spacing();
    let (mut max, mut sum, mut count) = (0.0f64, 0.0, 0usize);
    for c in grid.coords() {
        let da = map.domain_at(grid, c);
        for nb in grid.neighbors6(c) {
            if nb <= c {
                continue;
            }
            let db = map.domain_at(grid, nb);
            if da == db {
                continue;
            }
            let (x0, y0) = c.position(spacing);
            let (x1, y1) = nb.position(spacing);
            let (mx, my) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
            let ga = generator(da)?;
            let gb = generator(db)?;
            let d = ((mx - ga.x).hypot(my - ga.y) - (mx - gb.x).hypot(my - gb.y)).abs() / spacing;
            max = max.max(d);
            sum += d;
            count += 1;
        }
    }
    Ok(VoronoiCheck::Report(VoronoiReport {
        max_asymmetry: max,
        mean_asymmetry: if count > 0 { sum / count as f64 } else { 0.0 },
        boundary_edges: count,
    }))
}

/// Histogram of the classification window around `c`.
pub fn window_histogram(grid: &HexGrid, config: &CircuitConfig, c: CellCoord) -> Histogram {
    histogram(grid, &Region::disc(grid, c, config.window_radius))
}
