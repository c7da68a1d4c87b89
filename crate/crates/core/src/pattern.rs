//! Plain-text pattern codec.
//!
//! A full grid is written as one line per lattice row (even-r offset layout),
//! one character per cell from `{0,1,2,3}`. A fragment additionally allows
//! `.` for "leave the underlying cell unchanged" and may start with an anchor
//! line `@col,row` giving the offset position of its top-left character.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::lattice::{CellCoord, CellState, HexGrid};

/// Sparse set of cell writes at absolute lattice coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Fragment {
    cells: BTreeMap<CellCoord, CellState>,
}

impl Fragment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, c: CellCoord, s: CellState) {
        self.cells.insert(c, s);
    }

    pub fn get(&self, c: CellCoord) -> Option<CellState> {
        self.cells.get(&c).copied()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (CellCoord, CellState)> + '_ {
        self.cells.iter().map(|(&c, &s)| (c, s))
    }

    pub fn coords(&self) -> impl Iterator<Item = CellCoord> + '_ {
        self.cells.keys().copied()
    }

    /// Later writes win on overlapping cells.
    pub fn merge(&mut self, other: &Fragment) {
        for (c, s) in other.iter() {
            self.insert(c, s);
        }
    }

    /// Shift every cell by an axial offset, preserving shape.
    pub fn translated(&self, dq: i32, dr: i32) -> Fragment {
        Fragment {
            cells: self.iter().map(|(c, s)| (c.offset(dq, dr), s)).collect(),
        }
    }

    pub fn charge(&self) -> u64 {
        self.cells.values().map(|s| s.charge() as u64).sum()
    }

    /// Error unless every cell lies inside `grid`.
    pub fn check_bounds(&self, grid: &HexGrid) -> Result<()> {
        match self.coords().find(|&c| !grid.in_bounds(c)) {
            Some(c) => Err(Error::OutOfBounds(c)),
            None => Ok(()),
        }
    }

    /// Write every cell into `grid`. Nothing is written if any cell is out of bounds.
    pub fn apply(&self, grid: &mut HexGrid) -> Result<()> {
        self.check_bounds(grid)?;
        for (c, s) in self.iter() {
            grid.set(c, s)?;
        }
        Ok(())
    }
}

impl FromIterator<(CellCoord, CellState)> for Fragment {
    fn from_iter<T: IntoIterator<Item = (CellCoord, CellState)>>(iter: T) -> Self {
        Self {
            cells: iter.into_iter().collect(),
        }
    }
}

fn parse_rows(
    text: &str,
    allow_skip: bool,
    row_base: usize,
) -> Result<Vec<Vec<Option<CellState>>>> {
    let mut rows = Vec::new();
    let mut width = None;
    let mut lines: Vec<&str> = text
        .lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    for (i, line) in lines.into_iter().enumerate() {
        let mut row = Vec::with_capacity(line.len());
        for (col, ch) in line.chars().enumerate() {
            let cell = match ch {
                '.' if allow_skip => None,
                _ => Some(CellState::from_char(ch).ok_or_else(|| Error::Parse {
                    row: i + row_base,
                    col,
                    msg: format!("illegal character {ch:?}"),
                })?),
            };
            row.push(cell);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Parse {
                    row: i + row_base,
                    col: row.len().min(w),
                    msg: format!("ragged row: expected {w} cells, found {}", row.len()),
                })
            }
            _ => {}
        }
        rows.push(row);
    }
    if rows.is_empty() || width == Some(0) {
        return Err(Error::Parse {
            row: 0,
            col: 0,
            msg: "empty pattern".into(),
        });
    }
    Ok(rows)
}

/// Parse a full grid. Every character must be one of `0123`.
pub fn parse_grid(text: &str, spacing: f64) -> Result<HexGrid> {
    let rows = parse_rows(text, false, 0)?;
    let height = rows.len();
    let width = rows[0].len();
    let cells = rows
        .into_iter()
        .flatten()
        .map(|c| c.unwrap_or_default())
        .collect();
    HexGrid::from_cells(width, height, spacing, cells)
}

/// Serialize a full grid, one line per row, trailing newline.
pub fn serialize_grid(grid: &HexGrid) -> String {
    let mut out = String::with_capacity(grid.len() + grid.height());
    for (i, s) in grid.cells().iter().enumerate() {
        out.push(s.to_char());
        if (i + 1) % grid.width() == 0 {
            out.push('\n');
        }
    }
    out
}

/// Parse a fragment. An optional first line `@col,row` sets the anchor;
/// without it the anchor is `(0,0)`.
pub fn parse_fragment(text: &str) -> Result<Fragment> {
    let (anchor, body, row_base) = match text.lines().next() {
        Some(first) if first.starts_with('@') => {
            let spec = first[1..].trim();
            let parsed = spec.split_once(',').and_then(|(a, b)| {
                Some((a.trim().parse::<i32>().ok()?, b.trim().parse::<i32>().ok()?))
            });
            let anchor = parsed.ok_or_else(|| Error::Parse {
                row: 0,
                col: 1,
                msg: format!("bad anchor line {first:?}"),
            })?;
            let rest = text.split_once('\n').map(|(_, b)| b).unwrap_or("");
            (anchor, rest, 1)
        }
        _ => ((0, 0), text, 0),
    };
    let rows = parse_rows(body, true, row_base)?;
    let mut frag = Fragment::new();
    for (row, cells) in rows.iter().enumerate() {
        for (col, cell) in cells.iter().enumerate() {
            if let Some(s) = cell {
                frag.insert(
                    CellCoord::from_offset(anchor.0 + col as i32, anchor.1 + row as i32),
                    *s,
                );
            }
        }
    }
    Ok(frag)
}

/// Serialize a fragment over its offset bounding box with an anchor line.
pub fn serialize_fragment(frag: &Fragment) -> String {
    if frag.is_empty() {
        return "@0,0\n.\n".to_string();
    }
    let offs: Vec<(i32, i32)> = frag.coords().map(|c| c.to_offset()).collect();
    let c0 = offs.iter().map(|o| o.0).min().unwrap_or(0);
    let c1 = offs.iter().map(|o| o.0).max().unwrap_or(0);
    let r0 = offs.iter().map(|o| o.1).min().unwrap_or(0);
    let r1 = offs.iter().map(|o| o.1).max().unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(out, "@{c0},{r0}");
    for row in r0..=r1 {
        for col in c0..=c1 {
            let ch = frag
                .get(CellCoord::from_offset(col, row))
                .map_or('.', CellState::to_char);
            out.push(ch);
        }
        out.push('\n');
    }
    out
}
