use ddq_core::circuits::{
    voronoi_check, voronoi_generators, CircuitMap, CircuitType, VoronoiCheck, VoronoiPoint,
};
use ddq_core::{CellCoord, CellState, HexGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Grid, nearest-generator assignment and the map built from it.
fn assigned(rng: &mut ChaCha8Rng, k: usize) -> (HexGrid, Vec<(f64, f64)>, Vec<usize>, CircuitMap) {
    let g = HexGrid::new(24, 27, 0.98).unwrap();
    let (w, h) = g.coord_of(g.len() - 1).position(g.spacing());
    let gens: Vec<(f64, f64)> = (0..k)
        .map(|_| (rng.gen_range(0.0..w), rng.gen_range(0.0..h)))
        .collect();
    let owner: Vec<usize> = g
        .coords()
        .map(|c| {
            let (x, y) = c.position(g.spacing());
            (0..k)
                .min_by(|&a, &b| {
                    let da = (x - gens[a].0).hypot(y - gens[a].1);
                    let db = (x - gens[b].0).hypot(y - gens[b].1);
                    da.total_cmp(&db)
                })
                .unwrap()
        })
        .collect();
    let types = owner
        .iter()
        .map(|&o| CircuitType::new(o as u8 + 1).unwrap())
        .collect();
    let map = CircuitMap::from_cell_types(&g, types).unwrap();
    (g, gens, owner, map)
}

#[test]
fn ideal_partition_of_three_generators_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    for _ in 0..40 {
        let (g, gens, owner, map) = assigned(&mut rng, 3);
        if map.domains.len() != 3 {
            continue;
        }
        let points: Vec<VoronoiPoint> = (0..3)
            .map(|k| {
                let cell = g.coord_of(owner.iter().position(|&o| o == k).unwrap());
                VoronoiPoint {
                    x: gens[k].0,
                    y: gens[k].1,
                    domain: map.domain_at(&g, cell),
                }
            })
            .collect();
        let VoronoiCheck::Report(r) = voronoi_check(&g, &map, &points).unwrap() else {
            panic!("three domains must be checked");
        };
        assert!(
            r.max_asymmetry <= 1.0 + 1e-9,
            "max asymmetry {}",
            r.max_asymmetry
        );
        assert!(r.boundary_edges > 0);
        checked += 1;
    }
    assert!(
        checked >= 30,
        "only {checked} partitions had three connected domains"
    );
}

#[test]
fn generators_match_brute_force_centroids() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let (mut g, _, _, map) = assigned(&mut rng, 3);
        let cells: Vec<CellCoord> = g.coords().collect();
        for c in cells {
            if trial % 2 == 1 && rng.gen_bool(0.2) {
                g.set(
                    c,
                    if rng.gen_bool(0.5) {
                        CellState::S1
                    } else {
                        CellState::S3
                    },
                )
                .unwrap();
            }
        }
        let points = voronoi_generators(&g, &map);
        assert_eq!(points.len(), map.domains.len());
        for p in &points {
            let members: Vec<CellCoord> = g
                .coords()
                .filter(|&c| map.domain_at(&g, c) == p.domain)
                .collect();
            let charge: u32 = members.iter().map(|&c| g.state(c).charge()).sum();
            let weight = |c: CellCoord| {
                if charge > 0 {
                    g.state(c).charge() as f64
                } else {
                    1.0
                }
            };
            let total: f64 = members.iter().map(|&c| weight(c)).sum();
            let x: f64 = members
                .iter()
                .map(|&c| weight(c) * c.position(g.spacing()).0)
                .sum::<f64>()
                / total;
            let y: f64 = members
                .iter()
                .map(|&c| weight(c) * c.position(g.spacing()).1)
                .sum::<f64>()
                / total;
            assert!(
                (p.x - x).abs() < 1e-9 && (p.y - y).abs() < 1e-9,
                "domain {}: {p:?} vs ({x}, {y})",
                p.domain
            );
        }
    }
}
