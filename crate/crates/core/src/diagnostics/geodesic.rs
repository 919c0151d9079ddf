use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::heatmap::{HeatmapGrid, HeatmapKind};
use crate::env::{Cell, MazeLayout};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Connectivity {
    #[default]
    Four,
    /// Adds diagonal moves of cost √2. A diagonal needs both orthogonal
    /// cells free, so paths never cut a wall corner.
    Eight,
}

impl std::str::FromStr for Connectivity {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "4" => Ok(Self::Four),
            "8" => Ok(Self::Eight),
            other => Err(format!("unknown connectivity '{other}' (expected 4|8)")),
        }
    }
}

impl std::fmt::Display for Connectivity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Four => "4",
            Self::Eight => "8",
        })
    }
}

type Node = (usize, usize);

/// One-way teleport edges. In each row with a trigger, the free cell just
/// left of the first trigger cell connects to the leftmost free cell.
fn teleport_edges(layout: &MazeLayout) -> Vec<(Node, Node)> {
    let w = layout.width();
    let mut edges = Vec::new();
    for r in 0..layout.height() {
        let Some(t) = (1..w).find(|&c| layout.cell(r, c) == Cell::Teleport) else { continue };
        let Some(land) = (0..w).find(|&c| layout.is_free(r, c)) else { continue };
        if layout.is_free(r, t - 1) && land < t - 1 {
            edges.push(((r, t - 1), (r, land)));
        }
    }
    edges
}

fn neighbors(layout: &MazeLayout, (r, c): Node, conn: Connectivity, teleports: &[(Node, Node)], out: &mut Vec<(Node, f64)>) {
    out.clear();
    let free = |r: isize, c: isize| r >= 0 && c >= 0 && (r as usize) < layout.height() && (c as usize) < layout.width() && layout.is_free(r as usize, c as usize);
    let (ri, ci) = (r as isize, c as isize);
    for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
        if free(ri + dr, ci + dc) {
            out.push((((ri + dr) as usize, (ci + dc) as usize), 1.0));
        }
    }
    if conn == Connectivity::Eight {
        for (dr, dc) in [(-1, -1), (-1, 1), (1, -1), (1, 1)] {
            if free(ri + dr, ci + dc) && free(ri + dr, ci) && free(ri, ci + dc) {
                out.push((((ri + dr) as usize, (ci + dc) as usize), std::f64::consts::SQRT_2));
            }
        }
    }
    for &(from, to) in teleports {
        if from == (r, c) {
            out.push((to, 1.0));
        }
    }
}

fn grid_metric(a: Node, b: Node, conn: Connectivity) -> f64 {
    let dr = a.0.abs_diff(b.0) as f64;
    let dc = a.1.abs_diff(b.1) as f64;
    match conn {
        Connectivity::Four => dr + dc,
        Connectivity::Eight => dr + dc + (std::f64::consts::SQRT_2 - 2.0) * dr.min(dc),
    }
}

/// Open-grid distance, lowered by any route through a teleport edge. Each
/// term is consistent, so their minimum is too.
fn heuristic(u: Node, goal: Node, conn: Connectivity, teleports: &[(Node, Node)]) -> f64 {
    teleports
        .iter()
        .map(|&(a, b)| grid_metric(u, a, conn) + 1.0 + grid_metric(b, goal, conn))
        .fold(grid_metric(u, goal, conn), f64::min)
}

#[derive(PartialEq)]
struct Open {
    f: f64,
    g: f64,
    node: Node,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on f, then prefer deeper nodes, then a fixed node order
        other.f.total_cmp(&self.f).then(self.g.total_cmp(&other.g)).then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn check_free(layout: &MazeLayout, n: Node, what: &str) -> Result<()> {
    if n.0 >= layout.height() || n.1 >= layout.width() || !layout.is_free(n.0, n.1) {
        return Err(Error::Contract(format!("{what} {n:?} is not a free cell of '{}'", layout.name())));
    }
    Ok(())
}

/// Shortest path length from `from` to `goal` in grid steps, `+∞` if unreachable.
pub fn astar_distance(layout: &MazeLayout, from: Node, goal: Node, conn: Connectivity, teleport_aware: bool) -> Result<f64> {
    check_free(layout, from, "start")?;
    check_free(layout, goal, "goal")?;
    let teleports = if teleport_aware { teleport_edges(layout) } else { vec![] };
    Ok(search(layout, from, goal, conn, &teleports))
}

fn search(layout: &MazeLayout, from: Node, goal: Node, conn: Connectivity, teleports: &[(Node, Node)]) -> f64 {
    let w = layout.width();
    let mut best = vec![f64::INFINITY; layout.height() * w];
    let mut heap = BinaryHeap::new();
    best[from.0 * w + from.1] = 0.0;
    heap.push(Open { f: heuristic(from, goal, conn, teleports), g: 0.0, node: from });
    let mut adj = Vec::with_capacity(8);
    while let Some(Open { g, node, .. }) = heap.pop() {
        if node == goal {
            return g;
        }
        if g > best[node.0 * w + node.1] {
            continue;
        }
        neighbors(layout, node, conn, teleports, &mut adj);
        for &(next, cost) in &adj {
            let ng = g + cost;
            let slot = &mut best[next.0 * w + next.1];
            if ng < *slot {
                *slot = ng;
                heap.push(Open { f: ng + heuristic(next, goal, conn, teleports), g: ng, node: next });
            }
        }
    }
    f64::INFINITY
}

/// Geodesic distance from every free cell to `goal`.
pub fn astar_geodesic(layout: &MazeLayout, goal: Node, conn: Connectivity, teleport_aware: bool) -> Result<HeatmapGrid> {
    check_free(layout, goal, "goal")?;
    let teleports = if teleport_aware { teleport_edges(layout) } else { vec![] };
    let mut values = vec![None; layout.height() * layout.width()];
    for (r, c) in layout.free_cells() {
        values[r * layout.width() + c] = Some(search(layout, (r, c), goal, conn, &teleports));
    }
    Ok(HeatmapGrid {
        height: layout.height(),
        width: layout.width(),
        values,
        goal,
        kind: HeatmapKind::Geodesic { connectivity: conn, teleport_aware },
    })
}
