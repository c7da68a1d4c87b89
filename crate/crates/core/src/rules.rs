//! Transport rules 1-6 as pure operators over a grid snapshot.
//!
//! Operators never mutate the grid. They return intents (cell writes tagged
//! with the rule that produced them); the engine resolves conflicts between
//! intents and commits the winners.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuits::{CircuitConfig, CircuitMap, RuleId};
use crate::error::{Error, Result};
use crate::lattice::{nearest_coord, CellCoord, CellState, HexGrid, DIRECTIONS, SPACING_RANGE};

/// Hex distance beyond which charges do not see each other.
pub const DEFAULT_INTERACTION_RADIUS: i32 = 15;

const EPS: f64 = 1e-9;

/// Parameters of the attraction field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    /// Largest hex distance at which a charge contributes to a PPC.
    pub interaction_radius: i32,
    /// A charge is hidden when the sight line passes within this many lattice
    /// spacings of another charge.
    pub occlusion_clearance: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            interaction_radius: DEFAULT_INTERACTION_RADIUS,
            occlusion_clearance: 0.5,
        }
    }
}

/// Hold probabilities of charged cells (rule 2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MobilityConfig {
    pub p_base_s1: f64,
    pub p_base_s3: f64,
    /// Relative change of the hold probability across the spacing range;
    /// the multiplier is 1 at the middle of the range.
    pub spacing_slope: f64,
    /// Hold probability of a Rule 6 electron hop away from any state-2 site.
    pub p_base_hop: f64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self {
            p_base_s1: 0.25,
            p_base_s3: 0.50,
            spacing_slope: 0.5,
            p_base_hop: 0.9,
        }
    }
}

impl MobilityConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(self.p_base_s1) || !ok(self.p_base_s3) || !ok(self.p_base_hop) {
            return Err(Error::Config("p_base values must lie in [0, 1]".into()));
        }
        if self.p_base_s1 > self.p_base_s3 {
            return Err(Error::Config(
                "state 1 must not be held more often than state 3".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.spacing_slope) {
            return Err(Error::Config("spacing_slope must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Linear spacing multiplier: wider spacing slows transport.
    pub fn spacing_factor(&self, spacing: f64) -> f64 {
        let mid = 0.5 * (SPACING_RANGE.0 + SPACING_RANGE.1);
        let half = 0.5 * (SPACING_RANGE.1 - SPACING_RANGE.0);
        let x = ((spacing - mid) / half).clamp(-1.0, 1.0);
        1.0 + self.spacing_slope * x
    }

    /// Probability that a charged cell stays put this update.
    pub fn hold_probability(&self, state: CellState, spacing: f64) -> f64 {
        let base = match state {
            CellState::S3 => self.p_base_s3,
            _ => self.p_base_s1,
        };
        (base * self.spacing_factor(spacing)).clamp(0.0, 1.0)
    }
}

/// Draw whether a charged cell is held. Moves onto a state-2 site are never held.
pub fn mobility_hold<R: Rng + ?Sized>(
    config: &MobilityConfig,
    state: CellState,
    spacing: f64,
    target: CellState,
    rng: &mut R,
) -> bool {
    if target == CellState::S2 {
        return false;
    }
    let p = config.hold_probability(state, spacing);
    rng.gen::<f64>() < p
}

/// Draw whether a Rule 6 fission or fusion is held. A hop next to a state-2
/// site is never held.
pub fn hop_hold<R: Rng + ?Sized>(
    config: &MobilityConfig,
    spacing: f64,
    near_s2: bool,
    rng: &mut R,
) -> bool {
    if near_s2 {
        return false;
    }
    let p = (config.p_base_hop * config.spacing_factor(spacing)).clamp(0.0, 1.0);
    rng.gen::<f64>() < p
}

/// Whether any cell changed by `t` is, or touches, a state-2 site.
pub fn touches_s2(grid: &HexGrid, t: &Transition) -> bool {
    t.changes.iter().any(|&(c, before, _)| {
        before == CellState::S2 || grid.neighbors6(c).any(|n| grid.state(n) == CellState::S2)
    })
}

/// Pseudo positive charge seen by one observer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ppc {
    /// Position in nm.
    pub x: f64,
    pub y: f64,
    /// Total charge of the visible cells it was built from.
    pub visible_charge: u32,
}

impl Ppc {
    fn unit(&self, spacing: f64) -> (f64, f64) {
        (self.x / spacing, self.y / spacing)
    }
}

/// Distance from point `p` to the segment `a`-`b` (all in lattice units).
fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    (p.0 - cx).hypot(p.1 - cy)
}

/// True when no charged cell other than those rejected by `ignore` lies within
/// `clearance` of the sight line `from`-`to` (lattice units).
fn line_clear(
    grid: &HexGrid,
    from: (f64, f64),
    to: (f64, f64),
    clearance: f64,
    ignore: impl Fn(CellCoord) -> bool,
) -> bool {
    let len = (to.0 - from.0).hypot(to.1 - from.1);
    let steps = len.ceil().max(1.0) as usize;
    let mut seen: [CellCoord; 8] = [CellCoord::new(i32::MIN, i32::MIN); 8];
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        let p = (from.0 + t * (to.0 - from.0), from.1 + t * (to.1 - from.1));
        let base = nearest_coord(p.0, p.1);
        if seen.contains(&base) {
            continue;
        }
        seen[k % 8] = base;
        let mut candidates = [base; 7];
        candidates[1..].copy_from_slice(&base.ring1());
        for c in candidates {
            if ignore(c) || !grid.state(c).is_charged() {
                continue;
            }
            if segment_distance(c.unit_position(), from, to) <= clearance + EPS {
                return false;
            }
        }
    }
    true
}

/// Charge-weighted centroid (lattice units) of charges visible from a point.
/// `is_self` marks cells that neither contribute nor occlude.
fn visible_centroid(
    grid: &HexGrid,
    charged: &[(CellCoord, CellState)],
    origin: (f64, f64),
    origin_cell: CellCoord,
    field: &FieldConfig,
    is_self: impl Fn(CellCoord) -> bool + Copy,
) -> Option<((f64, f64), u32)> {
    let (mut sx, mut sy, mut w) = (0.0, 0.0, 0u32);
    for &(c, s) in charged {
        if is_self(c) || c.dist(origin_cell) > field.interaction_radius {
            continue;
        }
        let p = c.unit_position();
        let visible = line_clear(grid, origin, p, field.occlusion_clearance, |x| {
            x == c || is_self(x)
        });
        if visible {
            let q = s.charge();
            sx += q as f64 * p.0;
            sy += q as f64 * p.1;
            w += q;
        }
    }
    (w > 0).then(|| ((sx / w as f64, sy / w as f64), w))
}

/// PPC seen from a charged observer, or `None` when it sees no other charge.
pub fn compute_ppc(
    grid: &HexGrid,
    observer: CellCoord,
    field: &FieldConfig,
) -> Result<Option<Ppc>> {
    let s = grid.get(observer).ok_or(Error::OutOfBounds(observer))?;
    if !s.is_charged() {
        return Err(Error::NotCharged(observer));
    }
    let charged = grid.charged();
    Ok(ppc_from(grid, &charged, observer, field))
}

fn ppc_from(
    grid: &HexGrid,
    charged: &[(CellCoord, CellState)],
    observer: CellCoord,
    field: &FieldConfig,
) -> Option<Ppc> {
    let spacing = grid.spacing();
    visible_centroid(
        grid,
        charged,
        observer.unit_position(),
        observer,
        field,
        |c| c == observer,
    )
    .map(|((x, y), w)| Ppc {
        x: x * spacing,
        y: y * spacing,
        visible_charge: w,
    })
}

/// PPC for every charged cell, in `(r, q)` order of the observers.
pub fn ppc_field(grid: &HexGrid, field: &FieldConfig) -> Vec<(CellCoord, Option<Ppc>)> {
    let charged = grid.charged();
    charged
        .par_iter()
        .map(|&(c, _)| (c, ppc_from(grid, &charged, c, field)))
        .collect()
}

/// A single-cell move toward a PPC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MoveIntent {
    pub from: CellCoord,
    pub to: CellCoord,
    pub moved_state: CellState,
    pub rule: RuleId,
}

/// Generic set of cell writes produced by one rule firing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Intent {
    pub rule: RuleId,
    /// Tie-break anchor (smallest cell of the acting entity).
    pub source: CellCoord,
    /// New state of every touched cell.
    pub writes: Vec<(CellCoord, CellState)>,
    /// Where the charge of each newly charged or moved cell came from.
    pub origins: Vec<(CellCoord, CellCoord)>,
}

impl From<MoveIntent> for Intent {
    fn from(m: MoveIntent) -> Self {
        Intent {
            rule: m.rule,
            source: m.from,
            writes: vec![(m.from, CellState::S2), (m.to, m.moved_state)],
            origins: vec![(m.to, m.from)],
        }
    }
}

/// A cell-level state change, as produced by rules 4 and 6.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Transition {
    pub rule: RuleId,
    pub changes: Vec<(CellCoord, CellState, CellState)>,
}

impl Transition {
    pub fn charge_delta(&self) -> i64 {
        self.changes
            .iter()
            .map(|&(_, b, a)| a.charge() as i64 - b.charge() as i64)
            .sum()
    }

    pub fn into_intent(self) -> Intent {
        let source = self
            .changes
            .iter()
            .map(|c| c.0)
            .min()
            .unwrap_or(CellCoord::new(0, 0));
        let donor = self
            .changes
            .iter()
            .find(|(_, b, _)| b.is_charged())
            .map(|c| c.0);
        let origins = match donor {
            Some(d) => self
                .changes
                .iter()
                .filter(|(_, b, a)| !b.is_charged() && a.is_charged())
                .map(|&(c, _, _)| (c, d))
                .collect(),
            None => Vec::new(),
        };
        Intent {
            rule: self.rule,
            source,
            writes: self.changes.into_iter().map(|(c, _, a)| (c, a)).collect(),
            origins,
        }
    }
}

/// Best feasible single-step target for a charge at `from` heading to `goal`
/// (lattice units). Only strictly closer cells qualify.
fn step_toward(
    grid: &HexGrid,
    candidates: &[CellCoord],
    from: CellCoord,
    goal: (f64, f64),
) -> Option<CellCoord> {
    let d0 = dist2(from.unit_position(), goal);
    let mut best: Option<(f64, CellCoord)> = None;
    for &n in candidates {
        if grid.state(n).is_charged() {
            continue;
        }
        let d = dist2(n.unit_position(), goal);
        if d + EPS < d0 && best.is_none_or(|(bd, _)| d + EPS < bd) {
            best = Some((d, n));
        }
    }
    best.map(|(_, n)| n)
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

/// Directions available to a circuit of the given degree: `degree`
/// consecutive entries of the enumeration starting at `rotation`.
pub fn allowed_directions(degree: u8, rotation: usize) -> impl Iterator<Item = usize> {
    (0..degree.min(6) as usize).map(move |i| (rotation + i) % 6)
}

/// Rule-1 proposal for one charged cell, before the rule-2 hold draw.
/// With `rotation = 0` the candidates are exactly the lattice neighbor set of
/// the circuit degree.
pub fn converge_target(
    grid: &HexGrid,
    map: &CircuitMap,
    circuits: &CircuitConfig,
    cell: CellCoord,
    ppc: &Ppc,
    rotation: usize,
) -> Option<CellCoord> {
    let degree = circuits.degree(map.circuit_at(grid, cell));
    let candidates: Vec<CellCoord> = if rotation.is_multiple_of(6) {
        grid.neighbors(cell, degree).ok()?
    } else {
        allowed_directions(degree, rotation)
            .map(|d| cell.neighbor(d))
            .filter(|&n| grid.in_bounds(n))
            .collect()
    };
    step_toward(grid, &candidates, cell, ppc.unit(grid.spacing()))
}

/// Rule 1 with rule-2 holds: one move per mobile charged cell, in `(r, q)` order.
pub fn converge_intents<R: Rng + ?Sized>(
    grid: &HexGrid,
    map: &CircuitMap,
    circuits: &CircuitConfig,
    field: &FieldConfig,
    mobility: &MobilityConfig,
    rng: &mut R,
) -> Vec<MoveIntent> {
    let mut out = Vec::new();
    for (cell, ppc) in ppc_field(grid, field) {
        let Some(ppc) = ppc else { continue };
        let Some(to) = converge_target(grid, map, circuits, cell, &ppc, 0) else {
            continue;
        };
        let state = grid.state(cell);
        if mobility_hold(mobility, state, grid.spacing(), grid.state(to), rng) {
            continue;
        }
        out.push(MoveIntent {
            from: cell,
            to,
            moved_state: state,
            rule: 1,
        });
    }
    out
}

/// Charged cells acting together: either a connected piece of one written
/// entity or a single free charge.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Group {
    /// Members in `(r, q)` order.
    pub members: Vec<CellCoord>,
    /// Geometric centroid in lattice units.
    pub centroid: (f64, f64),
    /// Entity label; 0 for a free charge.
    pub label: u32,
}

impl Group {
    pub fn anchor(&self) -> CellCoord {
        self.members[0]
    }

    pub fn contains(&self, c: CellCoord) -> bool {
        self.members.binary_search(&c).is_ok()
    }

    /// Moves as one rigid entity (rule 5).
    pub fn rigid(&self) -> bool {
        self.label != 0 && self.members.len() >= 2
    }
}

/// Touching pair of groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Contact {
    pub a: usize,
    pub b: usize,
    /// Contact dimension: the smaller of the numbers of cells on either side
    /// that touch the other group. 1 is a single-point contact.
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSet {
    pub groups: Vec<Group>,
    pub contacts: Vec<Contact>,
    /// Group index per grid cell (`usize::MAX` for uncharged cells).
    #[serde(skip)]
    pub group_of: Vec<usize>,
}

fn charged_neighbors(grid: &HexGrid, c: CellCoord) -> impl Iterator<Item = CellCoord> + '_ {
    c.ring1()
        .into_iter()
        .filter(move |&n| grid.state(n).is_charged())
}

/// Groups of charged cells given per-cell entity labels (0 = free charge):
/// each connected piece of one label is a group and every free charge is a
/// group of its own. Contacts record the touching pairs.
pub fn detect_groups(grid: &HexGrid, labels: &[u32]) -> GroupSet {
    debug_assert_eq!(labels.len(), grid.len());
    let charged = grid.charged();
    let mut group_of = vec![usize::MAX; grid.len()];
    let mut groups = Vec::new();
    let mut queue = VecDeque::new();
    for &(start, _) in &charged {
        let si = grid.index_of(start).expect("in bounds");
        if group_of[si] != usize::MAX {
            continue;
        }
        let id = groups.len();
        let label = labels[si];
        group_of[si] = id;
        queue.push_back(start);
        let mut members = Vec::new();
        while let Some(c) = queue.pop_front() {
            members.push(c);
            if label == 0 {
                continue;
            }
            for n in charged_neighbors(grid, c) {
                let ni = grid.index_of(n).expect("charged cells are in bounds");
                if group_of[ni] == usize::MAX && labels[ni] == label {
                    group_of[ni] = id;
                    queue.push_back(n);
                }
            }
        }
        members.sort();
        let n = members.len() as f64;
        let (sx, sy) = members.iter().fold((0.0, 0.0), |(x, y), c| {
            let p = c.unit_position();
            (x + p.0, y + p.1)
        });
        groups.push(Group {
            members,
            centroid: (sx / n, sy / n),
            label,
        });
    }
    let mut sides: std::collections::BTreeMap<
        (usize, usize),
        (BTreeSet<CellCoord>, BTreeSet<CellCoord>),
    > = Default::default();
    for &(c, _) in &charged {
        let a = group_of[grid.index_of(c).expect("in bounds")];
        for n in charged_neighbors(grid, c) {
            let b = group_of[grid.index_of(n).expect("in bounds")];
            if a < b {
                let e = sides.entry((a, b)).or_default();
                e.0.insert(c);
                e.1.insert(n);
            }
        }
    }
    let contacts = sides
        .into_iter()
        .map(|((a, b), (sa, sb))| Contact {
            a,
            b,
            size: sa.len().min(sb.len()),
        })
        .collect();
    GroupSet {
        groups,
        contacts,
        group_of,
    }
}

/// Translate all members by one axial direction. `None` when a new cell is
/// out of bounds or charged by a non-member.
pub fn shift_group(
    grid: &HexGrid,
    members: &[CellCoord],
    dir: usize,
    rule: RuleId,
) -> Option<Intent> {
    let (dq, dr) = DIRECTIONS[dir];
    let inside = |c: CellCoord| members.binary_search(&c).is_ok();
    for &m in members {
        let t = m.offset(dq, dr);
        if !grid.in_bounds(t) || (!inside(t) && grid.state(t).is_charged()) {
            return None;
        }
    }
    let moved: BTreeSet<CellCoord> = members.iter().map(|m| m.offset(dq, dr)).collect();
    let mut writes = Vec::with_capacity(members.len() * 2);
    let mut origins = Vec::with_capacity(members.len());
    for &m in members {
        if !moved.contains(&m) {
            writes.push((m, CellState::S2));
        }
        writes.push((m.offset(dq, dr), grid.state(m)));
        origins.push((m.offset(dq, dr), m));
    }
    writes.sort_by_key(|w| w.0);
    Some(Intent {
        rule,
        source: members[0],
        writes,
        origins,
    })
}

/// Axial direction whose unit vector best matches `(vx, vy)`; ties go to the
/// first direction in enumeration order starting at `rotation`.
pub fn best_direction(vx: f64, vy: f64, rotation: usize) -> Option<usize> {
    if vx.hypot(vy) < EPS {
        return None;
    }
    let mut best = (f64::NEG_INFINITY, 0);
    for i in (0..6).map(|k| (rotation + k) % 6) {
        let (dq, dr) = DIRECTIONS[i];
        let (ux, uy) = CellCoord::new(dq, dr).unit_position();
        let dot = ux * vx + uy * vy;
        if dot > best.0 + EPS {
            best = (dot, i);
        }
    }
    Some(best.1)
}

/// Rule 3: groups in contact at exactly one adjacency push each other apart.
/// A group with several such contacts moves along the sum of the unit
/// repulsions and stays put when they cancel.
pub fn collide_rule3(grid: &HexGrid, set: &GroupSet, rotation: usize) -> Vec<Intent> {
    let mut push = vec![(0.0, 0.0, false); set.groups.len()];
    for contact in set.contacts.iter().filter(|c| c.size == 1) {
        let (ca, cb) = (
            set.groups[contact.a].centroid,
            set.groups[contact.b].centroid,
        );
        let (vx, vy) = (ca.0 - cb.0, ca.1 - cb.1);
        let n = vx.hypot(vy);
        if n < EPS {
            continue;
        }
        for (g, sign) in [(contact.a, 1.0), (contact.b, -1.0)] {
            push[g].0 += sign * vx / n;
            push[g].1 += sign * vy / n;
            push[g].2 = true;
        }
    }
    push.iter()
        .enumerate()
        .filter(|(_, p)| p.2)
        .filter_map(|(g, &(vx, vy, _))| {
            shift_group(
                grid,
                &set.groups[g].members,
                best_direction(vx, vy, rotation)?,
                3,
            )
        })
        .collect()
}

/// Rule 5: direction in which a rigid group moves toward its PPC, together
/// with the resulting shift (or `None` when blocked this step).
pub fn rigid_group_move(
    grid: &HexGrid,
    map: &CircuitMap,
    circuits: &CircuitConfig,
    field: &FieldConfig,
    charged: &[(CellCoord, CellState)],
    group: &Group,
    rotation: usize,
) -> Option<Intent> {
    let origin = group.centroid;
    let origin_cell = nearest_coord(origin.0, origin.1);
    let ((gx, gy), _) = visible_centroid(grid, charged, origin, origin_cell, field, |c| {
        group.contains(c)
    })?;
    let degree = circuits.degree(map.circuit_at(grid, group.anchor()));
    let d0 = dist2(origin, (gx, gy));
    let mut best: Option<(f64, usize)> = None;
    for dir in allowed_directions(degree, rotation) {
        let (dq, dr) = DIRECTIONS[dir];
        let (ux, uy) = CellCoord::new(dq, dr).unit_position();
        let d = dist2((origin.0 + ux, origin.1 + uy), (gx, gy));
        if d + EPS < d0 && best.is_none_or(|(bd, _)| d + EPS < bd) {
            best = Some((d, dir));
        }
    }
    let (_, dir) = best?;
    shift_group(grid, &group.members, dir, 5)
}

/// Active two-step decays: centers whose even ring cells already switched.
pub type PendingDecay = BTreeSet<CellCoord>;

/// One phase of a flower decay.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DecayFiring {
    pub center: CellCoord,
    /// 1 for the even ring positions, 2 for the odd ones.
    pub phase: u8,
    pub transition: Transition,
}

/// Rule 4b: a hexagonal cluster of seven state-2 cells decays to state 0 in two
/// steps, ring cells at even enumeration positions first, the center never.
/// Centers in `pending` run their second phase; fresh flowers start the first.
pub fn hex_decay_rule4(grid: &HexGrid, pending: &PendingDecay) -> Vec<DecayFiring> {
    let full: Vec<CellCoord> = grid
        .coords()
        .filter(|&c| {
            !pending.contains(&c)
                && grid.state(c) == CellState::S2
                && c.ring1()
                    .iter()
                    .all(|&n| grid.get(n) == Some(CellState::S2))
        })
        .collect();
    let centers: BTreeSet<CellCoord> = full.iter().chain(pending.iter()).copied().collect();
    let firing = |center: CellCoord, phase: u8| {
        let changes: Vec<_> = center
            .ring1()
            .iter()
            .enumerate()
            .filter(|(i, n)| {
                (i % 2 == 1) == (phase == 2)
                    && !centers.contains(n)
                    && grid.get(**n) == Some(CellState::S2)
            })
            .map(|(_, &n)| (n, CellState::S2, CellState::S0))
            .collect();
        DecayFiring {
            center,
            phase,
            transition: Transition { rule: 4, changes },
        }
    };
    let mut out: Vec<DecayFiring> = pending.iter().map(|&c| firing(c, 2)).collect();
    out.extend(full.iter().map(|&c| firing(c, 1)));
    out
}

/// Cells of one charged cluster with their states, in a dense local frame.
struct ClusterFrame {
    q0: i32,
    r0: i32,
    w: i32,
    h: i32,
    cells: Vec<Option<CellState>>,
}

impl ClusterFrame {
    fn new(members: &[(CellCoord, CellState)], pad: i32) -> Self {
        let q0 = members.iter().map(|m| m.0.q).min().unwrap_or(0) - pad;
        let r0 = members.iter().map(|m| m.0.r).min().unwrap_or(0) - pad;
        let q1 = members.iter().map(|m| m.0.q).max().unwrap_or(0) + pad;
        let r1 = members.iter().map(|m| m.0.r).max().unwrap_or(0) + pad;
        let (w, h) = (q1 - q0 + 1, r1 - r0 + 1);
        let mut cells = vec![None; (w * h) as usize];
        for &(c, s) in members {
            cells[((c.r - r0) * w + (c.q - q0)) as usize] = Some(s);
        }
        Self {
            q0,
            r0,
            w,
            h,
            cells,
        }
    }

    fn get(&self, c: CellCoord) -> Option<CellState> {
        let (q, r) = (c.q - self.q0, c.r - self.r0);
        if q < 0 || r < 0 || q >= self.w || r >= self.h {
            return None;
        }
        self.cells[(r * self.w + q) as usize]
    }
}

/// The eleven non-identity point symmetries of the hexagonal lattice, as
/// signed permutations of cube coordinates `(q, r, s)`.
fn symmetries() -> [[(usize, i64); 3]; 11] {
    let rotate = |m: [(usize, i64); 3]| m.map(|(k, sign)| ((k + 1) % 3, -sign));
    let mut rot = [(0, 1), (1, 1), (2, 1)];
    let mut mirror = [(0, 1), (2, 1), (1, 1)];
    let mut out = [[(0, 0); 3]; 11];
    out[5] = mirror;
    for k in 0..5 {
        rot = rotate(rot);
        mirror = rotate(mirror);
        out[k] = rot;
        out[6 + k] = mirror;
    }
    out
}

fn cube(c: CellCoord) -> [i64; 3] {
    [c.q as i64, c.r as i64, -(c.q as i64) - c.r as i64]
}

fn apply_sym(m: &[(usize, i64); 3], v: [i64; 3]) -> [i64; 3] {
    m.map(|(k, sign)| sign * v[k])
}

/// Asymmetry score of a cluster: the fewest members (with their states) that
/// fail to map onto a member of the same state under one of the eleven
/// non-identity hex point symmetries about the geometric centroid.
pub fn asymmetry_score(members: &[(CellCoord, CellState)]) -> usize {
    if members.len() <= 1 {
        return 0;
    }
    let frame = ClusterFrame::new(members, 0);
    let n = members.len() as i64;
    let sum = members.iter().fold([0i64; 3], |acc, (c, _)| {
        let v = cube(*c);
        [acc[0] + v[0], acc[1] + v[1], acc[2] + v[2]]
    });
    let mut best = members.len();
    for m in symmetries() {
        // image = S(p) + (Σ − S(Σ))/n, a lattice cell for every member
        // exactly when n divides the offset.
        let shift = apply_sym(&m, sum);
        let offset = [sum[0] - shift[0], sum[1] - shift[1]];
        if offset[0] % n != 0 || offset[1] % n != 0 {
            continue;
        }
        let (dq, dr) = (offset[0] / n, offset[1] / n);
        let mut miss = 0;
        for &(c, s) in members {
            let v = apply_sym(&m, cube(c));
            let hit = frame.get(CellCoord::new((v[0] + dq) as i32, (v[1] + dr) as i32)) == Some(s);
            if !hit {
                miss += 1;
                if miss >= best {
                    break;
                }
            }
        }
        best = best.min(miss);
        if best == 0 {
            break;
        }
    }
    best
}

/// Connected components of charged cells (any adjacency), with states.
pub fn charged_clusters(grid: &HexGrid) -> Vec<Vec<(CellCoord, CellState)>> {
    let mut seen = vec![false; grid.len()];
    let mut out = Vec::new();
    for (start, _) in grid.charged() {
        let si = grid.index_of(start).expect("in bounds");
        if seen[si] {
            continue;
        }
        seen[si] = true;
        let mut queue = VecDeque::from([start]);
        let mut members = Vec::new();
        while let Some(c) = queue.pop_front() {
            members.push((c, grid.state(c)));
            for n in charged_neighbors(grid, c) {
                let ni = grid.index_of(n).expect("in bounds");
                if !seen[ni] {
                    seen[ni] = true;
                    queue.push_back(n);
                }
            }
        }
        members.sort_by_key(|m| m.0);
        out.push(members);
    }
    out
}

/// Every legal rule-6 transition for a cluster: fission of one S3 into two S1
/// (one in place, one on an adjacent uncharged cell) and fusion of two
/// adjacent S1 into one S3 (partner cell becomes S2).
pub fn symmetry_moves(grid: &HexGrid, members: &[(CellCoord, CellState)]) -> Vec<Transition> {
    let mut out = Vec::new();
    for &(c, s) in members {
        if s != CellState::S3 {
            continue;
        }
        for n in c.ring1() {
            match grid.get(n) {
                Some(t) if !t.is_charged() => out.push(Transition {
                    rule: 6,
                    changes: vec![(c, CellState::S3, CellState::S1), (n, t, CellState::S1)],
                }),
                _ => {}
            }
        }
    }
    for (i, &(a, sa)) in members.iter().enumerate() {
        if sa != CellState::S1 {
            continue;
        }
        for &(b, sb) in &members[i + 1..] {
            if sb != CellState::S1 || !a.is_adjacent(b) {
                continue;
            }
            for (keep, drop) in [(a, b), (b, a)] {
                out.push(Transition {
                    rule: 6,
                    changes: vec![
                        (keep, CellState::S1, CellState::S3),
                        (drop, CellState::S1, CellState::S2),
                    ],
                });
            }
        }
    }
    out
}

fn apply_to_members(
    members: &[(CellCoord, CellState)],
    t: &Transition,
) -> Vec<(CellCoord, CellState)> {
    let mut out: Vec<(CellCoord, CellState)> = members
        .iter()
        .filter(|(c, _)| !t.changes.iter().any(|(x, _, a)| x == c && !a.is_charged()))
        .map(|&(c, s)| {
            (
                c,
                t.changes
                    .iter()
                    .find(|(x, _, _)| *x == c)
                    .map_or(s, |x| x.2),
            )
        })
        .collect();
    for &(c, before, after) in &t.changes {
        if !before.is_charged() && after.is_charged() {
            out.push((c, after));
        }
    }
    out.sort_by_key(|m| m.0);
    out
}

/// Rule 6: the single fission or fusion that most reduces the asymmetry of a
/// cluster, if any reduces it.
pub fn symmetrize_rule6(grid: &HexGrid, members: &[(CellCoord, CellState)]) -> Option<Transition> {
    let current = asymmetry_score(members);
    if current == 0 {
        return None;
    }
    let mut best: Option<(usize, Transition)> = None;
    for t in symmetry_moves(grid, members) {
        let score = asymmetry_score(&apply_to_members(members, &t));
        if score < current && best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, t));
        }
    }
    best.map(|(_, t)| t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::segment_domains;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(w: usize, h: usize) -> HexGrid {
        HexGrid::new(w, h, 1.0).unwrap()
    }

    fn put(g: &mut HexGrid, cells: &[(i32, i32, CellState)]) {
        for &(q, r, s) in cells {
            g.set(CellCoord::new(q, r), s).unwrap();
        }
    }

    use CellState::*;

    #[test]
    fn lone_charge_has_no_ppc() {
        let mut g = grid(20, 20);
        put(&mut g, &[(5, 5, S1)]);
        assert_eq!(
            compute_ppc(&g, CellCoord::new(5, 5), &FieldConfig::default()).unwrap(),
            None
        );
    }

    #[test]
    fn ppc_of_single_other_charge() {
        let mut g = grid(30, 20);
        put(&mut g, &[(5, 5, S1), (11, 5, S1)]);
        let p = compute_ppc(&g, CellCoord::new(5, 5), &FieldConfig::default())
            .unwrap()
            .unwrap();
        let (x, y) = CellCoord::new(11, 5).position(1.0);
        assert!((p.x - x).abs() < 1e-12 && (p.y - y).abs() < 1e-12);
        assert_eq!(p.visible_charge, 1);
    }

    #[test]
    fn collinear_charge_is_occluded() {
        let mut g = grid(30, 20);
        put(&mut g, &[(5, 5, S1), (9, 5, S1), (13, 5, S3)]);
        let p = compute_ppc(&g, CellCoord::new(5, 5), &FieldConfig::default())
            .unwrap()
            .unwrap();
        let (x, _) = CellCoord::new(9, 5).position(1.0);
        assert!((p.x - x).abs() < 1e-12);
        assert_eq!(p.visible_charge, 1);
    }

    #[test]
    fn uncharged_observer_rejected() {
        let g = grid(5, 5);
        assert_eq!(
            compute_ppc(&g, CellCoord::new(1, 1), &FieldConfig::default()),
            Err(Error::NotCharged(CellCoord::new(1, 1)))
        );
    }

    #[test]
    fn hold_probabilities_ordered() {
        let m = MobilityConfig::default();
        for i in 0..=20 {
            let dx = 0.93 + 0.005 * i as f64;
            assert!(m.hold_probability(S1, dx) < m.hold_probability(S3, dx));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..1000).all(|_| !mobility_hold(&m, S3, 1.0, S2, &mut rng)));
    }

    #[test]
    fn hold_frequency_matches_base() {
        let m = MobilityConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (s, p) in [(S1, 0.25), (S3, 0.5)] {
            let held = (0..10_000)
                .filter(|_| mobility_hold(&m, s, 0.98, S0, &mut rng))
                .count();
            assert!((held as f64 / 1e4 - p).abs() <= 0.02, "{s:?}: {held}");
        }
    }

    #[test]
    fn mutual_attraction() {
        let mut g = grid(30, 20);
        put(&mut g, &[(5, 5, S1), (11, 5, S1)]);
        let cfg = CircuitConfig::default();
        let map = segment_domains(&g, &cfg);
        let mobility = MobilityConfig {
            p_base_s1: 0.0,
            p_base_s3: 0.0,
            spacing_slope: 0.0,
            p_base_hop: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let intents =
            converge_intents(&g, &map, &cfg, &FieldConfig::default(), &mobility, &mut rng);
        assert_eq!(intents.len(), 2);
        assert_eq!(intents[0].from, CellCoord::new(5, 5));
        assert_eq!(intents[0].to, CellCoord::new(6, 5));
        assert_eq!(intents[1].to, CellCoord::new(10, 5));

        let frozen = MobilityConfig {
            p_base_s1: 1.0,
            p_base_s3: 1.0,
            spacing_slope: 0.0,
            p_base_hop: 1.0,
        };
        assert!(
            converge_intents(&g, &map, &cfg, &FieldConfig::default(), &frozen, &mut rng).is_empty()
        );
    }

    #[test]
    fn decay_two_phases_keep_center() {
        let mut g = grid(10, 10);
        let center = CellCoord::new(3, 4);
        g.set(center, S2).unwrap();
        for n in center.ring1() {
            g.set(n, S2).unwrap();
        }
        let f1 = hex_decay_rule4(&g, &PendingDecay::new());
        assert_eq!(f1.len(), 1);
        assert_eq!((f1[0].center, f1[0].phase), (center, 1));
        let ring = center.ring1();
        let changed: Vec<_> = f1[0].transition.changes.iter().map(|c| c.0).collect();
        assert_eq!(changed, vec![ring[0], ring[2], ring[4]]);
        for c in changed {
            g.set(c, S0).unwrap();
        }
        let f2 = hex_decay_rule4(&g, &PendingDecay::from([center]));
        assert_eq!(f2.len(), 1);
        let changed: Vec<_> = f2[0].transition.changes.iter().map(|c| c.0).collect();
        assert_eq!(changed, vec![ring[1], ring[3], ring[5]]);
    }

    #[test]
    fn incomplete_flower_does_not_decay() {
        let mut g = grid(10, 10);
        let center = CellCoord::new(3, 4);
        g.set(center, S2).unwrap();
        for n in &center.ring1()[..5] {
            g.set(*n, S2).unwrap();
        }
        assert!(hex_decay_rule4(&g, &PendingDecay::new()).is_empty());
    }

    #[test]
    fn ring_is_symmetric() {
        let c = CellCoord::new(5, 5);
        let ring: Vec<_> = c.ring1().iter().map(|&x| (x, S1)).collect();
        let mut members = ring.clone();
        members.sort_by_key(|m| m.0);
        assert_eq!(asymmetry_score(&members), 0);
        let mut g = grid(12, 12);
        for &(x, s) in &members {
            g.set(x, s).unwrap();
        }
        assert_eq!(symmetrize_rule6(&g, &members), None);
    }

    /// Same score computed with rotation matrices on cartesian positions.
    fn float_asymmetry(members: &[(CellCoord, CellState)]) -> usize {
        let n = members.len() as f64;
        let (cx, cy) = members.iter().fold((0.0, 0.0), |(x, y), (c, _)| {
            let p = c.unit_position();
            (x + p.0 / n, y + p.1 / n)
        });
        let mut mats = Vec::new();
        for k in 1..6 {
            let a = k as f64 * std::f64::consts::PI / 3.0;
            mats.push([a.cos(), -a.sin(), a.sin(), a.cos()]);
        }
        for j in 0..6 {
            let a = j as f64 * std::f64::consts::PI / 3.0;
            mats.push([a.cos(), a.sin(), a.sin(), -a.cos()]);
        }
        mats.iter()
            .map(|m| {
                members
                    .iter()
                    .filter(|&&(c, s)| {
                        let (dx, dy) = (c.unit_position().0 - cx, c.unit_position().1 - cy);
                        let (ix, iy) = (cx + m[0] * dx + m[1] * dy, cy + m[2] * dx + m[3] * dy);
                        let img = nearest_coord(ix, iy);
                        let (qx, qy) = img.unit_position();
                        (qx - ix).hypot(qy - iy) > 1e-6 || !members.contains(&(img, s))
                    })
                    .count()
            })
            .min()
            .unwrap()
    }

    #[test]
    fn asymmetry_matches_float_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let k = rng.gen_range(2..9);
            let mut members: Vec<(CellCoord, CellState)> = Vec::new();
            while members.len() < k {
                let c = CellCoord::new(rng.gen_range(0..4), rng.gen_range(0..4));
                if members.iter().all(|m| m.0 != c) {
                    members.push((c, if rng.gen_bool(0.6) { S1 } else { S3 }));
                }
            }
            members.sort_by_key(|m| m.0);
            assert_eq!(
                asymmetry_score(&members),
                float_asymmetry(&members),
                "{members:?}"
            );
        }
    }

    #[test]
    fn written_line_is_one_group() {
        let mut g = grid(20, 10);
        put(&mut g, &[(3, 3, S3), (4, 3, S1), (5, 3, S3), (6, 3, S1)]);
        let mut labels = vec![0; g.len()];
        for q in 3..7 {
            labels[g.index_of(CellCoord::new(q, 3)).unwrap()] = 1;
        }
        let set = detect_groups(&g, &labels);
        assert_eq!(set.groups.len(), 1);
        assert!(set.groups[0].rigid());
        let free = detect_groups(&g, &vec![0; g.len()]);
        assert_eq!(free.groups.len(), 4);
        assert!(free.contacts.iter().all(|c| c.size == 1));
    }

    #[test]
    fn adjacent_singletons_repel() {
        let mut g = grid(20, 10);
        put(&mut g, &[(5, 3, S1), (6, 3, S1)]);
        let set = detect_groups(&g, &vec![0; g.len()]);
        assert_eq!(set.groups.len(), 2);
        assert_eq!(
            set.contacts,
            vec![Contact {
                a: 0,
                b: 1,
                size: 1
            }]
        );
        let intents = collide_rule3(&g, &set, 0);
        assert_eq!(intents.len(), 2);
        let dest: Vec<_> = intents
            .iter()
            .map(|i| i.writes.iter().find(|w| w.1 == S1).unwrap().0)
            .collect();
        assert_eq!(dest, vec![CellCoord::new(4, 3), CellCoord::new(7, 3)]);
    }
}
