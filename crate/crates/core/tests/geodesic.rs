use proptest::prelude::*;
use straightlab::diagnostics::{astar_distance, astar_geodesic, Connectivity};
use straightlab::env::{Cell, MazeLayout};

const SQ2: f64 = std::f64::consts::SQRT_2;

/// Plain O(n²) Dijkstra over the same move rules, written independently.
fn dijkstra(l: &MazeLayout, goal: (usize, usize), conn: Connectivity, teleport: bool) -> Vec<Vec<f64>> {
    let (h, w) = (l.height(), l.width());
    let free = |r: i64, c: i64| r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && l.is_free(r as usize, c as usize);
    let mut edges: Vec<((usize, usize), (usize, usize), f64)> = Vec::new();
    for (r, c) in l.free_cells() {
        let (ri, ci) = (r as i64, c as i64);
        for (dr, dc) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
            if free(ri + dr, ci + dc) {
                edges.push(((r, c), ((ri + dr) as usize, (ci + dc) as usize), 1.0));
            }
        }
        if conn == Connectivity::Eight {
            for (dr, dc) in [(-1i64, -1i64), (-1, 1), (1, -1), (1, 1)] {
                if free(ri + dr, ci + dc) && free(ri + dr, ci) && free(ri, ci + dc) {
                    edges.push(((r, c), ((ri + dr) as usize, (ci + dc) as usize), SQ2));
                }
            }
        }
        // the cell touching the first trigger of its row jumps to the row's leftmost free cell
        if teleport && c + 1 < w && l.cell(r, c + 1) == Cell::Teleport && !(0..=c).any(|k| l.cell(r, k) == Cell::Teleport) {
            let land = (0..w).find(|&k| l.is_free(r, k)).unwrap();
            if land < c {
                edges.push(((r, c), (r, land), 1.0));
            }
        }
    }
    // distances to the goal: relax reversed edges outward from it
    let mut dist = vec![vec![f64::INFINITY; w]; h];
    let mut done = vec![vec![false; w]; h];
    dist[goal.0][goal.1] = 0.0;
    loop {
        let mut best: Option<(usize, usize)> = None;
        for (r, c) in l.free_cells() {
            if !done[r][c] && dist[r][c].is_finite() && best.is_none_or(|(br, bc)| dist[r][c] < dist[br][bc]) {
                best = Some((r, c));
            }
        }
        let Some(v) = best else { break };
        done[v.0][v.1] = true;
        for &(from, to, cost) in &edges {
            if to == v && dist[v.0][v.1] + cost < dist[from.0][from.1] {
                dist[from.0][from.1] = dist[v.0][v.1] + cost;
            }
        }
    }
    dist
}

fn open3() -> MazeLayout {
    MazeLayout::parse("open3", "#####\n#...#\n#...#\n#...#\n#####\n", 1.0, [0.0, 0.0]).unwrap()
}

#[test]
fn hand_enumerated_open_grid() {
    let l = open3();
    let four = [[0.0, 1.0, 2.0], [1.0, 2.0, 3.0], [2.0, 3.0, 4.0]];
    let eight = [[0.0, 1.0, 2.0], [1.0, SQ2, 1.0 + SQ2], [2.0, 1.0 + SQ2, 2.0 * SQ2]];
    for (conn, want) in [(Connectivity::Four, four), (Connectivity::Eight, eight)] {
        let g = astar_geodesic(&l, (1, 1), conn, false).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(g.get(r + 1, c + 1), Some(want[r][c]), "{conn} ({r},{c})");
            }
        }
    }
}

#[test]
fn hand_enumerated_umaze() {
    let l = MazeLayout::named("umaze").unwrap();
    // goal at the bottom-left end of the U; the path runs right, up, then left
    let want = [((3, 1), 0.0), ((3, 2), 1.0), ((3, 3), 2.0), ((2, 3), 3.0), ((1, 3), 4.0), ((1, 2), 5.0), ((1, 1), 6.0)];
    for conn in [Connectivity::Four, Connectivity::Eight] {
        let g = astar_geodesic(&l, (3, 1), conn, false).unwrap();
        for ((r, c), d) in want {
            assert_eq!(g.get(r, c), Some(d), "{conn} ({r},{c})");
        }
        assert_eq!(g.cells().count(), 7);
    }
}

#[test]
fn teleport_geodesics_never_exceed_plain_ones() {
    for res in [1, 2, 3] {
        let l = MazeLayout::named("teleport").unwrap().refined(res);
        for goal in l.free_cells() {
            for conn in [Connectivity::Four, Connectivity::Eight] {
                let plain = astar_geodesic(&l, goal, conn, false).unwrap();
                let tele = astar_geodesic(&l, goal, conn, true).unwrap();
                for ((_, _, p), (_, _, t)) in plain.cells().zip(tele.cells()) {
                    assert!(t <= p, "res {res} goal {goal:?}");
                }
            }
        }
    }
}

#[test]
fn teleport_shortcut_only_goes_left() {
    let l = MazeLayout::named("teleport").unwrap();
    assert_eq!(astar_distance(&l, (3, 5), (3, 1), Connectivity::Four, true).unwrap(), 1.0);
    assert_eq!(astar_distance(&l, (3, 1), (3, 5), Connectivity::Four, true).unwrap(), 4.0);
}

fn maze() -> impl Strategy<Value = (MazeLayout, usize)> {
    (2usize..7, 2usize..7).prop_flat_map(|(h, w)| {
        (prop::collection::vec(prop::bool::weighted(0.7), h * w), prop::collection::vec(any::<bool>(), h), any::<usize>()).prop_map(
            move |(free, tele, pick)| {
                let mut s = "#".repeat(w + 2);
                s.push('\n');
                for r in 0..h {
                    s.push('#');
                    for c in 0..w {
                        // teleport rows need a free landing cell at the left border
                        s.push(if free[r * w + c] || (c == 0 && tele[r]) { '.' } else { '#' });
                    }
                    s.push(if tele[r] { 'T' } else { '#' });
                    s.push('\n');
                }
                s.push_str(&"#".repeat(w + 2));
                s.push('\n');
                (MazeLayout::parse("random", &s, 1.0, [0.0, 0.0]).unwrap(), pick)
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn astar_matches_dijkstra((l, pick) in maze(), eight in any::<bool>(), teleport in any::<bool>()) {
        let cells = l.free_cells();
        prop_assume!(!cells.is_empty());
        let goal = cells[pick % cells.len()];
        let conn = if eight { Connectivity::Eight } else { Connectivity::Four };
        let ours = astar_geodesic(&l, goal, conn, teleport).unwrap();
        let oracle = dijkstra(&l, goal, conn, teleport);
        for (r, c, v) in ours.cells() {
            let o = oracle[r][c];
            prop_assert!(v == o || (v - o).abs() < 1e-12, "({r},{c}): {v} vs {o}\n{}", l.to_ascii());
        }
    }
}
