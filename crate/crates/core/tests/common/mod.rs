//! Exhaustive and randomized engine checks shared by the integration tests
//! and the acceptance target. Each check returns a one-line summary on
//! success and the first counterexample on failure.

#![allow(dead_code)]

use std::collections::BTreeSet;

use ddq_core::circuits::segment_domains;
use ddq_core::engine::{
    micro_step, run, trigger, Event, Schedule, SimConfig, SimState, Trajectory,
};
use ddq_core::pattern::{serialize_grid, Fragment};
use ddq_core::rules::{
    charged_clusters, collide_rule3, compute_ppc, converge_target, detect_groups, ppc_field,
    rigid_group_move, symmetrize_rule6, symmetry_moves, FieldConfig, Intent, MoveIntent,
    DEFAULT_INTERACTION_RADIUS,
};
use ddq_core::{CellCoord, CellState, HexGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

const SPACING: f64 = 0.98;

fn blank(w: usize, h: usize) -> HexGrid {
    HexGrid::new(w, h, SPACING).expect("valid grid")
}

/// Every `k`-subset of `0..n`, in lexicographic order.
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Random grid with a few written entities, evolved for `scans` scans.
pub fn random_scenario(seed: u64, scans: u32) -> (HexGrid, Schedule, SimConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (rng.gen_range(6..=12), rng.gen_range(6..=12));
    let density = rng.gen_range(0.0..0.5);
    let mut g = blank(w, h);
    let coords: Vec<CellCoord> = g.coords().collect();
    for c in coords {
        let s = if rng.gen_bool(density) {
            CellState::ALL[rng.gen_range(0..4)]
        } else {
            CellState::S0
        };
        g.set(c, s).expect("in bounds");
    }
    let mut schedule = Schedule::new(scans);
    for _ in 0..rng.gen_range(0..3) {
        let mut f = Fragment::new();
        let (col, row) = (
            rng.gen_range(0..w as i32 - 2),
            rng.gen_range(0..h as i32 - 2),
        );
        for dr in 0..2 {
            for dc in 0..rng.gen_range(1..=3) {
                let s = if rng.gen_bool(0.7) {
                    CellState::S1
                } else {
                    CellState::S3
                };
                f.insert(CellCoord::from_offset(col + dc, row + dr), s);
            }
        }
        schedule = schedule.at_scan(0, Event::Write(f));
    }
    schedule = schedule.at_scan(0, Event::Trigger);
    let mut config = SimConfig::with_seed(rng.gen());
    config.micro_steps_per_scan = rng.gen_range(1..=10);
    (g, schedule, config)
}

/// Total charge of every snapshot equals that of snapshot 0 (all protocol
/// events sit at t = 0).
pub fn conservation_case(seed: u64) -> Check {
    let (g, schedule, config) = random_scenario(seed, 2);
    let t = run(g, &schedule, &config).map_err(|e| format!("seed {seed}: {e}"))?;
    let q0 = t.snapshots[0].grid.total_charge();
    for s in &t.snapshots {
        let q = s.grid.total_charge();
        if q != q0 {
            return Err(format!(
                "seed {seed}: charge {q0} became {q} at scan {}",
                s.scan
            ));
        }
    }
    Ok(format!("charge {q0} kept"))
}

pub fn conservation(cases: u64) -> Check {
    for seed in 0..cases {
        conservation_case(seed)?;
    }
    Ok(format!("{cases} random scenarios conserve charge"))
}

fn fingerprint(t: &Trajectory) -> Vec<String> {
    let mut out: Vec<String> = t
        .snapshots
        .iter()
        .map(|s| serialize_grid(&s.grid))
        .collect();
    out.extend(t.events.iter().map(|e| format!("{e:?}")));
    out
}

/// Replays agree bit for bit within one pool and across pool sizes.
pub fn determinism(seeds: u64) -> Check {
    for seed in 0..seeds {
        let (g, schedule, config) = random_scenario(1_000 + seed, 3);
        let mut prints = Vec::new();
        for threads in [1, 1, 2, 4] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| e.to_string())?;
            let t = pool
                .install(|| run(g.clone(), &schedule, &config))
                .map_err(|e| e.to_string())?;
            prints.push((threads, fingerprint(&t)));
        }
        if let Some((threads, _)) = prints.iter().find(|p| p.1 != prints[0].1) {
            return Err(format!(
                "seed {seed}: replay with {threads} threads differs"
            ));
        }
    }
    Ok(format!(
        "{seeds} scenarios identical over 4 replays on 1, 2 and 4 threads"
    ))
}

/// Planted S2 flowers on an empty grid decay in two steps and keep their center.
pub fn hex_decay_exactness(trials: u64) -> Check {
    let config = SimConfig::default();
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let mut g = blank(24, 27);
        let mut centers: Vec<CellCoord> = Vec::new();
        for _ in 0..rng.gen_range(1..=4) {
            let c = CellCoord::from_offset(rng.gen_range(1..23), rng.gen_range(1..26));
            if centers.iter().all(|o| o.dist(c) >= 3) && c.ring1().iter().all(|&n| g.in_bounds(n)) {
                centers.push(c);
            }
        }
        for &c in &centers {
            g.set(c, CellState::S2).expect("in bounds");
            for n in c.ring1() {
                g.set(n, CellState::S2).expect("in bounds");
            }
        }
        let mut state = SimState::new(g.clone(), &config).map_err(|e| e.to_string())?;
        trigger(&mut state);
        for phase in 1..=2u8 {
            micro_step(&mut state, &config);
            let mut expect = blank(24, 27);
            for &c in &centers {
                expect.set(c, CellState::S2).expect("in bounds");
                for (i, n) in c.ring1().into_iter().enumerate() {
                    let gone = i % 2 == 0 || phase == 2;
                    expect
                        .set(n, if gone { CellState::S0 } else { CellState::S2 })
                        .expect("in bounds");
                }
            }
            if state.grid.cells() != expect.cells() {
                return Err(format!(
                    "trial {trial}: phase {phase} differs from the planted decay"
                ));
            }
        }
    }
    Ok(format!(
        "{trials} planted layouts decay exactly, centers kept"
    ))
}

/// A lone partner is seen up to hex distance 15 and not beyond.
pub fn radius_cutoff() -> Check {
    let g0 = blank(41, 41);
    let observer = g0.center_cell();
    let field = FieldConfig::default();
    let mut seen_at_edge = false;
    for c in g0.coords().filter(|&c| c != observer) {
        let mut g = g0.clone();
        g.set(observer, CellState::S1).expect("in bounds");
        g.set(c, CellState::S1).expect("in bounds");
        let sees = compute_ppc(&g, observer, &field)
            .map_err(|e| e.to_string())?
            .is_some();
        let d = c.dist(observer);
        if sees != (d <= DEFAULT_INTERACTION_RADIUS) {
            return Err(format!("partner at distance {d}: visible = {sees}"));
        }
        seen_at_edge |= sees && d == DEFAULT_INTERACTION_RADIUS;
    }
    if !seen_at_edge {
        return Err("no partner at distance 15 was checked".into());
    }
    Ok(format!(
        "{} placements: visible iff hex distance <= 15",
        g0.len() - 1
    ))
}

/// Cells an intent acts from: its origins' sources plus, for single moves,
/// the moving cell.
fn actors(intent: &Intent) -> BTreeSet<CellCoord> {
    let mut out: BTreeSet<CellCoord> = intent.origins.iter().map(|o| o.1).collect();
    out.insert(intent.source);
    out
}

fn charged_into_foreign(
    grid: &HexGrid,
    intent: &Intent,
    own: &BTreeSet<CellCoord>,
) -> Option<CellCoord> {
    intent
        .writes
        .iter()
        .find(|(c, s)| s.is_charged() && grid.state(*c).is_charged() && !own.contains(c))
        .map(|w| w.0)
}

/// Every intent of Rules 1, 3, 5 and 6 over all placements of three charges
/// (states 1/3, entity labels 0/1/2) on a 4×3 grid writes charge only into
/// uncharged cells or cells of the acting entity.
pub fn no_intent_into_charged() -> Check {
    let g0 = blank(4, 3);
    let config = SimConfig::default();
    let mut configs = 0usize;
    let mut intents = 0usize;
    for cells in subsets(g0.len(), 3) {
        for states in 0..8u32 {
            let mut g = g0.clone();
            for (k, &i) in cells.iter().enumerate() {
                let s = if states >> k & 1 == 1 {
                    CellState::S3
                } else {
                    CellState::S1
                };
                g.set(g.coord_of(i), s).expect("in bounds");
            }
            let map = segment_domains(&g, &config.circuits);
            let field = ppc_field(&g, &config.field);
            let charged = g.charged();
            for labels in 0..27u32 {
                let mut lab = vec![0u32; g.len()];
                for (k, &i) in cells.iter().enumerate() {
                    lab[i] = labels / 3u32.pow(k as u32) % 3;
                }
                let set = detect_groups(&g, &lab);
                for rotation in 0..6 {
                    let mut found: Vec<(Intent, BTreeSet<CellCoord>)> = Vec::new();
                    if labels == 0 {
                        for (cell, ppc) in &field {
                            let Some(ppc) = ppc else { continue };
                            if let Some(to) =
                                converge_target(&g, &map, &config.circuits, *cell, ppc, rotation)
                            {
                                let m = MoveIntent {
                                    from: *cell,
                                    to,
                                    moved_state: g.state(*cell),
                                    rule: 1,
                                };
                                found.push((m.into(), BTreeSet::from([*cell])));
                            }
                        }
                        if rotation == 0 {
                            for members in charged_clusters(&g) {
                                let own: BTreeSet<CellCoord> =
                                    members.iter().map(|m| m.0).collect();
                                for t in symmetry_moves(&g, &members)
                                    .into_iter()
                                    .chain(symmetrize_rule6(&g, &members))
                                {
                                    found.push((t.into_intent(), own.clone()));
                                }
                            }
                        }
                    }
                    for i in collide_rule3(&g, &set, rotation) {
                        let own = actors(&i);
                        found.push((i, own));
                    }
                    for grp in set.groups.iter().filter(|g| g.rigid()) {
                        if let Some(i) = rigid_group_move(
                            &g,
                            &map,
                            &config.circuits,
                            &config.field,
                            &charged,
                            grp,
                            rotation,
                        ) {
                            found.push((i, grp.members.iter().copied().collect()));
                        }
                    }
                    for (intent, own) in &found {
                        if let Some(c) = charged_into_foreign(&g, intent, own) {
                            return Err(format!(
                                "rule {} writes charge into occupied {c:?} on\n{}",
                                intent.rule,
                                serialize_grid(&g)
                            ));
                        }
                    }
                    intents += found.len();
                }
                configs += 1;
            }
        }
    }
    Ok(format!(
        "{configs} configurations, {intents} intents, none into a charged cell"
    ))
}

/// Every Rule 6 transition on every 3×3 grid over states {0, 1, 3}
/// conserves charge.
pub fn rule6_conservation() -> Check {
    let g0 = blank(3, 3);
    let n = g0.len() as u32;
    let (mut grids, mut moves) = (0usize, 0usize);
    for code in 0..3u32.pow(n) {
        let mut g = g0.clone();
        for i in 0..n {
            let s =
                [CellState::S0, CellState::S1, CellState::S3][(code / 3u32.pow(i) % 3) as usize];
            g.set(g.coord_of(i as usize), s).expect("in bounds");
        }
        for members in charged_clusters(&g) {
            let chosen = symmetrize_rule6(&g, &members);
            for t in symmetry_moves(&g, &members).iter().chain(chosen.as_ref()) {
                if t.charge_delta() != 0 {
                    return Err(format!(
                        "transition {t:?} changes charge on\n{}",
                        serialize_grid(&g)
                    ));
                }
                moves += 1;
            }
        }
        grids += 1;
    }
    Ok(format!(
        "{grids} grids, {moves} fission/fusion transitions, all charge-neutral"
    ))
}

/// Brute-force contact size between two member sets.
fn contact_size(a: &[CellCoord], b: &[CellCoord]) -> usize {
    let touching = |x: &[CellCoord], y: &[CellCoord]| {
        x.iter()
            .filter(|c| y.iter().any(|d| c.is_adjacent(*d)))
            .count()
    };
    touching(a, b).min(touching(b, a))
}

/// Over all placements of four S1 with labels 0/1/2 on a 4×3 grid, contact
/// sizes match a brute-force count and Rule 3 moves only groups that have a
/// single-point contact.
pub fn rule3_single_point() -> Check {
    let g0 = blank(4, 3);
    let (mut configs, mut fired) = (0usize, 0usize);
    for cells in subsets(g0.len(), 4) {
        let mut g = g0.clone();
        for &i in &cells {
            g.set(g.coord_of(i), CellState::S1).expect("in bounds");
        }
        for labels in 0..81u32 {
            let mut lab = vec![0u32; g.len()];
            for (k, &i) in cells.iter().enumerate() {
                lab[i] = labels / 3u32.pow(k as u32) % 3;
            }
            let set = detect_groups(&g, &lab);
            let mut single = BTreeSet::new();
            for (a, ga) in set.groups.iter().enumerate() {
                for (b, gb) in set.groups.iter().enumerate().skip(a + 1) {
                    let size = contact_size(&ga.members, &gb.members);
                    let listed = set
                        .contacts
                        .iter()
                        .find(|c| (c.a, c.b) == (a, b) || (c.a, c.b) == (b, a));
                    if listed.map_or(0, |c| c.size) != size {
                        return Err(format!(
                            "contact {a}-{b} listed as {listed:?}, brute force {size}"
                        ));
                    }
                    if size == 1 {
                        single.insert(a);
                        single.insert(b);
                    }
                }
            }
            for rotation in 0..6 {
                for intent in collide_rule3(&g, &set, rotation) {
                    let movers: BTreeSet<CellCoord> = intent.origins.iter().map(|o| o.1).collect();
                    let group = set.groups.iter().position(|gr| {
                        gr.members.iter().copied().collect::<BTreeSet<_>>() == movers
                    });
                    match group {
                        Some(k) if single.contains(&k) => fired += 1,
                        _ => {
                            return Err(format!(
                                "rule 3 moved {movers:?} without a single-point contact (labels {labels})\n{}",
                                serialize_grid(&g)
                            ))
                        }
                    }
                }
            }
            configs += 1;
        }
    }
    Ok(format!(
        "{configs} configurations, {fired} rule 3 moves, all from single-point contacts"
    ))
}
