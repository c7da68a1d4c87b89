//! Deterministic update scheduler.
//!
//! One micro-step recomputes circuits, gathers intents from every rule,
//! orders them by (domain rank, rule rank, source cell), accepts each intent
//! whose cells are still unclaimed and commits the winners at once.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::circuits::{segment_domains, CircuitConfig, CircuitMap, CircuitType, RuleId};
use crate::error::{Error, Result};
use crate::lattice::{CellCoord, CellState, HexGrid, SPACING_RANGE};
use crate::pattern::Fragment;
use crate::protocols::{intervention_apply, InterventionKind};
use crate::rules::{
    charged_clusters, collide_rule3, converge_target, detect_groups, hex_decay_rule4, hop_hold,
    mobility_hold, ppc_field, rigid_group_move, symmetrize_rule6, touches_s2, FieldConfig,
    GroupSet, Intent, MobilityConfig, MoveIntent, PendingDecay,
};

/// Seconds between two scans.
pub const SCAN_PERIOD_S: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    /// Lattice spacing Δx in nm.
    pub spacing: f64,
    pub micro_steps_per_scan: u32,
    pub scan_period_s: f64,
    pub mobility: MobilityConfig,
    pub circuits: CircuitConfig,
    pub field: FieldConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            spacing: 0.98,
            micro_steps_per_scan: 10,
            scan_period_s: SCAN_PERIOD_S,
            mobility: MobilityConfig::default(),
            circuits: CircuitConfig::default(),
            field: FieldConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.micro_steps_per_scan == 0 {
            return Err(Error::Config(
                "micro_steps_per_scan must be at least 1".into(),
            ));
        }
        if self.scan_period_s != SCAN_PERIOD_S {
            return Err(Error::Config(format!(
                "scan_period_s must be {SCAN_PERIOD_S}"
            )));
        }
        if !(SPACING_RANGE.0..=SPACING_RANGE.1).contains(&self.spacing) {
            return Err(Error::Config(format!(
                "spacing {} nm outside [{}, {}]",
                self.spacing, SPACING_RANGE.0, SPACING_RANGE.1
            )));
        }
        if self.field.interaction_radius < 1 || self.field.occlusion_clearance < 0.0 {
            return Err(Error::Config(
                "interaction radius must be positive and clearance non-negative".into(),
            ));
        }
        self.mobility.validate()?;
        self.circuits.validate()
    }
}

/// Complete dynamic state of one simulation.
#[derive(Debug, Clone)]
pub struct SimState {
    pub grid: HexGrid,
    pub evolution_enabled: bool,
    pub rng: ChaCha8Rng,
    pub elapsed_s: f64,
    /// Flowers between the two phases of their decay.
    pub pending_decay: PendingDecay,
    /// Micro-steps taken with evolution enabled; rotates the direction
    /// window of low-degree circuits.
    pub steps: u64,
    /// Entity label per cell; 0 marks a free charge or an uncharged cell.
    pub labels: Vec<u32>,
    pub next_label: u32,
}

impl SimState {
    pub fn new(mut grid: HexGrid, config: &SimConfig) -> Result<Self> {
        grid.set_spacing(config.spacing)?;
        Ok(Self {
            evolution_enabled: false,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            elapsed_s: 0.0,
            pending_decay: PendingDecay::new(),
            steps: 0,
            labels: vec![0; grid.len()],
            next_label: 1,
            grid,
        })
    }

    /// Write a fragment; each connected piece of its charged cells becomes
    /// one entity.
    pub fn write(&mut self, fragment: &Fragment) -> Result<()> {
        fragment.apply(&mut self.grid)?;
        let mut seen = BTreeSet::new();
        for (c, s) in fragment.iter() {
            let i = self.grid.index_of(c).expect("fragment checked in bounds");
            self.labels[i] = 0;
            if !s.is_charged() {
                seen.insert(c);
            }
        }
        for (start, s) in fragment.iter() {
            if !s.is_charged() || !seen.insert(start) {
                continue;
            }
            let label = self.next_label;
            self.next_label += 1;
            let mut stack = vec![start];
            while let Some(c) = stack.pop() {
                self.labels[self.grid.index_of(c).expect("in bounds")] = label;
                for n in c.ring1() {
                    if fragment.get(n).is_some_and(|x| x.is_charged()) && seen.insert(n) {
                        stack.push(n);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Grid at a scan boundary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub scan: u32,
    pub time_s: f64,
    #[serde(skip)]
    pub grid: HexGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub scan: u32,
    pub time_s: f64,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub events: Vec<LogEntry>,
}

impl Trajectory {
    pub fn grids(&self) -> impl Iterator<Item = &HexGrid> {
        self.snapshots.iter().map(|s| &s.grid)
    }

    pub fn last(&self) -> &HexGrid {
        &self
            .snapshots
            .last()
            .expect("trajectory always holds the initial snapshot")
            .grid
    }
}

/// Protocol verb applied at a scan boundary.
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Write(Fragment),
    EraseAll,
    Trigger,
    Intervene(InterventionKind),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedEvent {
    pub time_s: f64,
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Schedule {
    pub events: Vec<TimedEvent>,
    pub scans: u32,
}

impl Schedule {
    pub fn new(scans: u32) -> Self {
        Self {
            events: Vec::new(),
            scans,
        }
    }

    pub fn at_scan(mut self, scan: u32, event: Event) -> Self {
        self.events.push(TimedEvent {
            time_s: scan as f64 * SCAN_PERIOD_S,
            event,
        });
        self
    }

    /// Scan index of every event; errors on unsorted, misaligned or late entries.
    pub fn scan_indices(&self, period: f64) -> Result<Vec<u32>> {
        let mut out = Vec::with_capacity(self.events.len());
        let mut last = f64::NEG_INFINITY;
        for (i, e) in self.events.iter().enumerate() {
            if !e.time_s.is_finite() || e.time_s < 0.0 {
                return Err(Error::Schedule(format!(
                    "event {i}: invalid time {}",
                    e.time_s
                )));
            }
            if e.time_s < last {
                return Err(Error::Schedule(format!(
                    "event {i}: time {} s precedes previous event",
                    e.time_s
                )));
            }
            let k = (e.time_s / period).round();
            if (k * period - e.time_s).abs() > 1e-9 {
                return Err(Error::Schedule(format!(
                    "event {i}: time {} s is not a multiple of the {period} s scan period",
                    e.time_s
                )));
            }
            if k as u32 > self.scans {
                return Err(Error::Schedule(format!(
                    "event {i}: time {} s lies after the last scan",
                    e.time_s
                )));
            }
            last = e.time_s;
            out.push(k as u32);
        }
        Ok(out)
    }
}

/// Reset every cell to state 0.
pub fn erase_all(state: &mut SimState) {
    state.grid.fill(CellState::S0);
    state.labels.fill(0);
    state.pending_decay.clear();
}

/// Enable spontaneous evolution.
pub fn trigger(state: &mut SimState) {
    state.evolution_enabled = true;
}

enum Hold {
    /// Moving charge state and the state of the first entered cell.
    Move(CellState, CellState),
    /// Rule 6 hop; the flag marks a state-2 site in reach.
    Hop(bool),
}

struct Candidate {
    key: (usize, usize, CellCoord),
    intent: Intent,
    hold: Option<Hold>,
    decay: Option<(CellCoord, u8)>,
}

fn hold_state(grid: &HexGrid, members: &[CellCoord]) -> CellState {
    if members.iter().any(|&m| grid.state(m) == CellState::S3) {
        CellState::S3
    } else {
        CellState::S1
    }
}

/// State of the cells a shifting entity moves onto: S2 only when every
/// freshly entered cell is a trail.
fn entered_state(grid: &HexGrid, intent: &Intent) -> CellState {
    let fresh = intent
        .writes
        .iter()
        .filter(|(c, s)| s.is_charged() && !grid.state(*c).is_charged());
    let mut any = false;
    for (c, _) in fresh {
        any = true;
        if grid.state(*c) != CellState::S2 {
            return CellState::S0;
        }
    }
    if any {
        CellState::S2
    } else {
        CellState::S0
    }
}

fn collect_candidates(
    grid: &HexGrid,
    map: &CircuitMap,
    config: &SimConfig,
    pending: &PendingDecay,
    groups: &GroupSet,
    rotation: usize,
) -> Vec<Candidate> {
    let circuits = &config.circuits;
    let rank = |source: CellCoord, rule: RuleId| -> (usize, usize, CellCoord) {
        let domain = map.domain_at(grid, source);
        let t: CircuitType = map.domains[domain].circuit;
        (domain, circuits.rule_rank(t, rule), source)
    };
    let mut out = Vec::new();

    for members in charged_clusters(grid) {
        if let Some(t) = symmetrize_rule6(grid, &members) {
            let hold = Some(Hold::Hop(touches_s2(grid, &t)));
            let intent = t.into_intent();
            out.push(Candidate {
                key: rank(members[0].0, 6),
                intent,
                hold,
                decay: None,
            });
        }
    }

    let charged = grid.charged();
    let mut in_rigid = BTreeSet::new();
    for g in groups.groups.iter().filter(|g| g.rigid()) {
        in_rigid.extend(g.members.iter().copied());
        if let Some(intent) =
            rigid_group_move(grid, map, circuits, &config.field, &charged, g, rotation)
        {
            let hold = Some(Hold::Move(
                hold_state(grid, &g.members),
                entered_state(grid, &intent),
            ));
            out.push(Candidate {
                key: rank(g.anchor(), 5),
                intent,
                hold,
                decay: None,
            });
        }
    }

    for (cell, ppc) in ppc_field(grid, &config.field) {
        let Some(ppc) = ppc else { continue };
        if in_rigid.contains(&cell) {
            continue;
        }
        if let Some(to) = converge_target(grid, map, circuits, cell, &ppc, rotation) {
            let state = grid.state(cell);
            let intent: Intent = MoveIntent {
                from: cell,
                to,
                moved_state: state,
                rule: 1,
            }
            .into();
            out.push(Candidate {
                key: rank(cell, 1),
                intent,
                hold: Some(Hold::Move(state, grid.state(to))),
                decay: None,
            });
        }
    }

    for intent in collide_rule3(grid, groups, rotation) {
        let members: Vec<CellCoord> = intent
            .writes
            .iter()
            .filter(|(c, _)| grid.state(*c).is_charged())
            .map(|w| w.0)
            .collect();
        let hold = Some(Hold::Move(
            hold_state(grid, &members),
            entered_state(grid, &intent),
        ));
        out.push(Candidate {
            key: rank(intent.source, 3),
            intent,
            hold,
            decay: None,
        });
    }

    for f in hex_decay_rule4(grid, pending) {
        let intent = f.transition.clone().into_intent();
        let source = f.center;
        out.push(Candidate {
            key: rank(source, 4),
            intent,
            hold: None,
            decay: Some((f.center, f.phase)),
        });
    }
    out
}

/// Groups of the current grid after entities touching anything along two or
/// more cells have dissolved into free charges.
fn dissolve_merged(grid: &HexGrid, labels: &mut [u32]) -> GroupSet {
    let set = detect_groups(grid, labels);
    let mut dissolved = BTreeSet::new();
    for c in set.contacts.iter().filter(|c| c.size >= 2) {
        for g in [c.a, c.b] {
            if set.groups[g].label != 0 {
                dissolved.insert(set.groups[g].label);
            }
        }
    }
    if dissolved.is_empty() {
        return set;
    }
    for l in labels.iter_mut() {
        if dissolved.contains(l) {
            *l = 0;
        }
    }
    detect_groups(grid, labels)
}

/// Advance the state by one micro-step.
pub fn micro_step(state: &mut SimState, config: &SimConfig) {
    if !state.evolution_enabled {
        return;
    }
    let grid = &state.grid;
    let map = segment_domains(grid, &config.circuits);
    let rotation = state.rng.gen_range(0..6);
    let flip = state.rng.gen_bool(0.5);
    let groups = dissolve_merged(grid, &mut state.labels);
    let mut candidates =
        collect_candidates(grid, &map, config, &state.pending_decay, &groups, rotation);
    candidates.sort_by(|a, b| {
        let source = if flip {
            b.key.2.cmp(&a.key.2)
        } else {
            a.key.2.cmp(&b.key.2)
        };
        (a.key.0, a.key.1).cmp(&(b.key.0, b.key.1)).then(source)
    });

    let mut claimed = vec![false; grid.len()];
    let mut writes: Vec<(usize, CellState)> = Vec::new();
    let mut relabel: Vec<(usize, u32)> = Vec::new();
    let mut pending_next = PendingDecay::new();
    for cand in candidates {
        let held = match cand.hold {
            Some(Hold::Move(moving, target)) => mobility_hold(
                &config.mobility,
                moving,
                grid.spacing(),
                target,
                &mut state.rng,
            ),
            Some(Hold::Hop(near_s2)) => {
                hop_hold(&config.mobility, grid.spacing(), near_s2, &mut state.rng)
            }
            None => false,
        };
        if held {
            continue;
        }
        let idx: Vec<usize> = cand
            .intent
            .writes
            .iter()
            .map(|(c, _)| grid.index_of(*c).expect("intent inside grid"))
            .collect();
        if idx.iter().any(|&i| claimed[i]) {
            if let Some((center, 2)) = cand.decay {
                pending_next.insert(center);
            }
            continue;
        }
        for (&i, &(_, s)) in idx.iter().zip(&cand.intent.writes) {
            claimed[i] = true;
            writes.push((i, s));
            if !s.is_charged() {
                relabel.push((i, 0));
            }
        }
        for &(to, from) in &cand.intent.origins {
            let from = state.labels[grid.index_of(from).expect("intent inside grid")];
            relabel.push((grid.index_of(to).expect("intent inside grid"), from));
        }
        if let Some((center, 1)) = cand.decay {
            pending_next.insert(center);
        }
    }
    for (i, s) in writes {
        let c = state.grid.coord_of(i);
        state.grid.set(c, s).expect("index in bounds");
    }
    for (i, l) in relabel {
        state.labels[i] = l;
    }
    state.pending_decay = pending_next;
    state.steps += 1;
}

/// Run one scan: `S` micro-steps followed by a snapshot.
pub fn scan(state: &mut SimState, config: &SimConfig, index: u32) -> Snapshot {
    for _ in 0..config.micro_steps_per_scan {
        micro_step(state, config);
    }
    state.elapsed_s += config.scan_period_s;
    Snapshot {
        scan: index,
        time_s: state.elapsed_s,
        grid: state.grid.clone(),
    }
}

fn apply_event(state: &mut SimState, event: &Event) -> Result<(String, Option<String>)> {
    Ok(match event {
        Event::Write(f) => {
            state.write(f)?;
            (
                format!("write {} cells (charge {})", f.len(), f.charge()),
                None,
            )
        }
        Event::EraseAll => {
            erase_all(state);
            ("erase all".to_string(), None)
        }
        Event::Trigger => {
            trigger(state);
            ("trigger".to_string(), None)
        }
        Event::Intervene(kind) => intervention_apply(state, kind)?,
    })
}

/// Interleave protocol events with scans. Events at time `k·period` apply
/// just before snapshot `k` is taken; snapshot 0 is the state at t = 0.
pub fn run(initial: HexGrid, schedule: &Schedule, config: &SimConfig) -> Result<Trajectory> {
    config.validate()?;
    let at = schedule.scan_indices(config.scan_period_s)?;
    for (i, e) in schedule.events.iter().enumerate() {
        if let Event::Write(f) = &e.event {
            f.check_bounds(&initial)
                .map_err(|err| Error::Schedule(format!("event {i}: {err}")))?;
        }
    }
    let mut state = SimState::new(initial, config)?;
    let mut snapshots = Vec::with_capacity(schedule.scans as usize + 1);
    let mut events = Vec::new();
    let mut next = 0;
    for k in 0..=schedule.scans {
        while next < at.len() && at[next] == k {
            let (message, warning) = apply_event(&mut state, &schedule.events[next].event)
                .map_err(|err| Error::Schedule(format!("event {next}: {err}")))?;
            events.push(LogEntry {
                scan: k,
                time_s: state.elapsed_s,
                message,
                warning,
            });
            next += 1;
        }
        if k == 0 {
            snapshots.push(Snapshot {
                scan: 0,
                time_s: 0.0,
                grid: state.grid.clone(),
            });
        } else {
            snapshots.push(scan(&mut state, config, k));
        }
    }
    Ok(Trajectory { snapshots, events })
}
