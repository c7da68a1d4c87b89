//! Hexagonal lattice geometry, cell states and charge accounting.
//!
//! Cells are addressed with axial coordinates `(q, r)`. The grid itself is
//! stored in even-r offset layout: row `r` holds columns `0..width`, and the
//! axial column of a cell is `q = col - (r + (r & 1)) / 2`. Iterating the
//! storage in row-major order therefore visits cells in `(r, q)` order, which
//! is the total order used for every tie-break in the crate.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower and upper bounds of the intermolecular spacing, in nm.
pub const SPACING_RANGE: (f64, f64) = (0.93, 1.03);

pub const SQRT3: f64 = 1.732_050_807_568_877_2;

/// One of the four conducting states of a cell.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
pub enum CellState {
    #[default]
    S0,
    S1,
    S2,
    S3,
}

impl CellState {
    pub const ALL: [CellState; 4] = [CellState::S0, CellState::S1, CellState::S2, CellState::S3];

    /// Excess electrons carried by the state.
    pub fn charge(self) -> u32 {
        match self {
            CellState::S1 => 1,
            CellState::S3 => 2,
            CellState::S0 | CellState::S2 => 0,
        }
    }

    /// Only S1 and S3 carry charge and move.
    pub fn is_charged(self) -> bool {
        matches!(self, CellState::S1 | CellState::S3)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn to_char(self) -> char {
        match self {
            CellState::S0 => '0',
            CellState::S1 => '1',
            CellState::S2 => '2',
            CellState::S3 => '3',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            '0' => Some(CellState::S0),
            '1' => Some(CellState::S1),
            '2' => Some(CellState::S2),
            '3' => Some(CellState::S3),
            _ => None,
        }
    }
}

/// The six axial directions in the fixed enumeration order E, NE, NW, W, SW, SE.
pub const DIRECTIONS: [(i32, i32); 6] = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)];

/// Axial lattice coordinate. Ordered by `(r, q)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellCoord {
    pub q: i32,
    pub r: i32,
}

impl Ord for CellCoord {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.r, self.q).cmp(&(other.r, other.q))
    }
}

impl PartialOrd for CellCoord {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for CellCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.q, self.r)
    }
}

impl CellCoord {
    pub const fn new(q: i32, r: i32) -> Self {
        Self { q, r }
    }

    /// Axial coordinate of an even-r offset `(col, row)` position.
    pub fn from_offset(col: i32, row: i32) -> Self {
        Self {
            q: col - (row + (row & 1)) / 2,
            r: row,
        }
    }

    /// Even-r offset `(col, row)` of this coordinate.
    pub fn to_offset(self) -> (i32, i32) {
        (self.q + (self.r + (self.r & 1)) / 2, self.r)
    }

    pub fn offset(self, dq: i32, dr: i32) -> Self {
        Self {
            q: self.q + dq,
            r: self.r + dr,
        }
    }

    pub fn neighbor(self, dir: usize) -> Self {
        let (dq, dr) = DIRECTIONS[dir];
        self.offset(dq, dr)
    }

    /// All six axial neighbors in enumeration order, ignoring bounds.
    pub fn ring1(self) -> [CellCoord; 6] {
        DIRECTIONS.map(|(dq, dr)| self.offset(dq, dr))
    }

    /// Hex (lattice) distance.
    pub fn dist(self, other: CellCoord) -> i32 {
        let dq = self.q - other.q;
        let dr = self.r - other.r;
        (dq.abs() + dr.abs() + (dq + dr).abs()) / 2
    }

    pub fn is_adjacent(self, other: CellCoord) -> bool {
        self.dist(other) == 1
    }

    /// Cartesian position in lattice units (nearest-neighbor spacing 1).
    pub fn unit_position(self) -> (f64, f64) {
        (
            self.q as f64 + 0.5 * self.r as f64,
            0.5 * SQRT3 * self.r as f64,
        )
    }

    /// Cartesian position in nm for the given spacing.
    pub fn position(self, spacing: f64) -> (f64, f64) {
        let (x, y) = self.unit_position();
        (x * spacing, y * spacing)
    }

    /// Every coordinate within hex distance `radius`, in `(r, q)` order.
    pub fn disc(self, radius: i32) -> Vec<CellCoord> {
        let mut out = Vec::new();
        for dr in -radius..=radius {
            let lo = (-radius).max(-dr - radius);
            let hi = radius.min(-dr + radius);
            for dq in lo..=hi {
                out.push(self.offset(dq, dr));
            }
        }
        out
    }

    /// Coordinates at exactly hex distance `radius`, in `(r, q)` order.
    pub fn ring(self, radius: i32) -> Vec<CellCoord> {
        self.disc(radius)
            .into_iter()
            .filter(|c| c.dist(self) == radius)
            .collect()
    }
}

/// Nearest lattice coordinate to a cartesian point in lattice units.
pub fn nearest_coord(x: f64, y: f64) -> CellCoord {
    let r = y / (0.5 * SQRT3);
    let q = x - 0.5 * r;
    // cube rounding
    let s = -q - r;
    let (mut rq, mut rr, rs) = (q.round(), r.round(), s.round());
    let (dq, dr, ds) = ((rq - q).abs(), (rr - r).abs(), (rs - s).abs());
    if dq > dr && dq > ds {
        rq = -rr - rs;
    } else if dr > ds {
        rr = -rq - rs;
    }
    CellCoord::new(rq as i32, rr as i32)
}

/// Area of one lattice site, in nm².
pub fn site_area(spacing: f64) -> f64 {
    0.5 * SQRT3 * spacing * spacing
}

/// Area enclosed by a seven-cell flower (center plus six neighbors), in nm².
pub fn flower_area(spacing: f64) -> f64 {
    1.5 * SQRT3 * spacing * spacing
}

/// Bounded hexagonal lattice of four-state cells with a reflecting boundary.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HexGrid {
    width: usize,
    height: usize,
    spacing_pm: u32,
    cells: Vec<CellState>,
}

impl HexGrid {
    pub const DEFAULT_WIDTH: usize = 24;
    pub const DEFAULT_HEIGHT: usize = 27;

    /// All-S0 grid. `spacing` is the intermolecular distance in nm.
    pub fn new(width: usize, height: usize, spacing: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Geometry(format!(
                "grid must be non-empty, got {width}x{height}"
            )));
        }
        Ok(Self {
            width,
            height,
            spacing_pm: spacing_to_pm(spacing)?,
            cells: vec![CellState::S0; width * height],
        })
    }

    pub fn from_cells(
        width: usize,
        height: usize,
        spacing: f64,
        cells: Vec<CellState>,
    ) -> Result<Self> {
        if cells.len() != width * height {
            return Err(Error::Geometry(format!(
                "expected {} cells for {width}x{height}, got {}",
                width * height,
                cells.len()
            )));
        }
        let mut grid = Self::new(width, height, spacing)?;
        grid.cells = cells;
        Ok(grid)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Intermolecular spacing in nm.
    pub fn spacing(&self) -> f64 {
        self.spacing_pm as f64 / 1000.0
    }

    pub fn set_spacing(&mut self, spacing: f64) -> Result<()> {
        self.spacing_pm = spacing_to_pm(spacing)?;
        Ok(())
    }

    pub fn site_area(&self) -> f64 {
        site_area(self.spacing())
    }

    pub fn in_bounds(&self, c: CellCoord) -> bool {
        let (col, row) = c.to_offset();
        col >= 0 && row >= 0 && (col as usize) < self.width && (row as usize) < self.height
    }

    pub fn index_of(&self, c: CellCoord) -> Option<usize> {
        if self.in_bounds(c) {
            let (col, row) = c.to_offset();
            Some(row as usize * self.width + col as usize)
        } else {
            None
        }
    }

    pub fn coord_of(&self, index: usize) -> CellCoord {
        CellCoord::from_offset((index % self.width) as i32, (index / self.width) as i32)
    }

    /// State at `c`, or `None` when out of bounds.
    pub fn get(&self, c: CellCoord) -> Option<CellState> {
        self.index_of(c).map(|i| self.cells[i])
    }

    /// State at `c`; out-of-bounds coordinates read as S0.
    pub fn state(&self, c: CellCoord) -> CellState {
        self.get(c).unwrap_or_default()
    }

    pub fn set(&mut self, c: CellCoord, s: CellState) -> Result<()> {
        let i = self.index_of(c).ok_or(Error::OutOfBounds(c))?;
        self.cells[i] = s;
        Ok(())
    }

    pub fn cells(&self) -> &[CellState] {
        &self.cells
    }

    pub fn fill(&mut self, s: CellState) {
        self.cells.iter_mut().for_each(|c| *c = s);
    }

    /// All coordinates in `(r, q)` order.
    pub fn coords(&self) -> impl Iterator<Item = CellCoord> + '_ {
        (0..self.cells.len()).map(|i| self.coord_of(i))
    }

    /// Coordinates and states of every charged cell, in `(r, q)` order.
    pub fn charged(&self) -> Vec<(CellCoord, CellState)> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_charged())
            .map(|(i, &s)| (self.coord_of(i), s))
            .collect()
    }

    pub fn total_charge(&self) -> u64 {
        self.cells.iter().map(|s| s.charge() as u64).sum()
    }

    pub fn count(&self, s: CellState) -> usize {
        self.cells.iter().filter(|&&c| c == s).count()
    }

    /// The first `degree` in-bounds neighbors in the fixed enumeration order.
    pub fn neighbors(&self, c: CellCoord, degree: u8) -> Result<Vec<CellCoord>> {
        if !(2..=6).contains(&degree) {
            return Err(Error::InvalidDegree(degree));
        }
        if !self.in_bounds(c) {
            return Err(Error::OutOfBounds(c));
        }
        Ok(c.ring1()
            .into_iter()
            .filter(|&n| self.in_bounds(n))
            .take(degree as usize)
            .collect())
    }

    /// In-bounds neighbors of `c` (up to six), no degree clipping.
    pub fn neighbors6(&self, c: CellCoord) -> impl Iterator<Item = CellCoord> + '_ {
        c.ring1().into_iter().filter(move |&n| self.in_bounds(n))
    }

    /// In-bounds cells within hex distance `radius` of `c`.
    pub fn disc(&self, c: CellCoord, radius: i32) -> Vec<CellCoord> {
        c.disc(radius)
            .into_iter()
            .filter(|&n| self.in_bounds(n))
            .collect()
    }

    /// Geometric center of the grid in lattice units.
    pub fn unit_center(&self) -> (f64, f64) {
        let n = self.cells.len() as f64;
        let (sx, sy) = self.coords().fold((0.0, 0.0), |(ax, ay), c| {
            let (x, y) = c.unit_position();
            (ax + x, ay + y)
        });
        (sx / n, sy / n)
    }

    /// Cell nearest to the geometric center.
    pub fn center_cell(&self) -> CellCoord {
        CellCoord::from_offset((self.width / 2) as i32, (self.height / 2) as i32)
    }
}

fn spacing_to_pm(spacing: f64) -> Result<u32> {
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::Config(format!(
            "spacing must be positive, got {spacing}"
        )));
    }
    Ok((spacing * 1000.0).round() as u32)
}

/// A set of in-bounds lattice cells.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Region {
    cells: BTreeSet<CellCoord>,
}

impl Region {
    /// Region over `coords`; every coordinate must lie inside `grid`.
    pub fn new(grid: &HexGrid, coords: impl IntoIterator<Item = CellCoord>) -> Result<Self> {
        let mut cells = BTreeSet::new();
        for c in coords {
            if !grid.in_bounds(c) {
                return Err(Error::OutOfBounds(c));
            }
            cells.insert(c);
        }
        Ok(Self { cells })
    }

    /// Region over `coords`, silently dropping out-of-bounds cells.
    pub fn clipped(grid: &HexGrid, coords: impl IntoIterator<Item = CellCoord>) -> Self {
        Self {
            cells: coords.into_iter().filter(|&c| grid.in_bounds(c)).collect(),
        }
    }

    pub fn all(grid: &HexGrid) -> Self {
        Self {
            cells: grid.coords().collect(),
        }
    }

    pub fn disc(grid: &HexGrid, center: CellCoord, radius: i32) -> Self {
        Self::clipped(grid, center.disc(radius))
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, c: CellCoord) -> bool {
        self.cells.contains(&c)
    }

    pub fn iter(&self) -> impl Iterator<Item = CellCoord> + '_ {
        self.cells.iter().copied()
    }

    pub fn area_nm2(&self, spacing: f64) -> f64 {
        self.cells.len() as f64 * site_area(spacing)
    }

    pub fn is_disjoint(&self, other: &Region) -> bool {
        self.cells.is_disjoint(&other.cells)
    }
}

impl FromIterator<CellCoord> for Region {
    fn from_iter<T: IntoIterator<Item = CellCoord>>(iter: T) -> Self {
        Self {
            cells: iter.into_iter().collect(),
        }
    }
}

/// Excess electrons Q = #S1 + 2·#S3 inside `region`.
pub fn excess_charge(grid: &HexGrid, region: &Region) -> u64 {
    region.iter().map(|c| grid.state(c).charge() as u64).sum()
}

/// Excess electrons per nm² inside `region`.
pub fn charge_density(grid: &HexGrid, region: &Region) -> Result<f64> {
    if region.is_empty() {
        return Err(Error::EmptyRegion);
    }
    Ok(excess_charge(grid, region) as f64 / region.area_nm2(grid.spacing()))
}

/// Per-state cell counts, indexed by [`CellState::index`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Histogram(pub [usize; 4]);

impl Histogram {
    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn get(&self, s: CellState) -> usize {
        self.0[s.index()]
    }

    pub fn fraction(&self, s: CellState) -> f64 {
        let t = self.total();
        if t == 0 {
            0.0
        } else {
            self.get(s) as f64 / t as f64
        }
    }

    pub fn charge(&self) -> usize {
        self.get(CellState::S1) + 2 * self.get(CellState::S3)
    }

    pub fn from_counts(s0: usize, s1: usize, s2: usize, s3: usize) -> Self {
        Self([s0, s1, s2, s3])
    }
}

pub fn histogram(grid: &HexGrid, region: &Region) -> Histogram {
    let mut h = [0usize; 4];
    for c in region.iter() {
        h[grid.state(c).index()] += 1;
    }
    Histogram(h)
}
