//! Shortest-path distance maps on the maze grids and their rank agreement
//! with a pixel-space distance heatmap.

use straightlab::diagnostics::{astar_distance, astar_geodesic, heatmap_agreement, latent_heatmap, Connectivity, FeatureSource, IdentityEmbedding};
use straightlab::env::{MazeLayout, NavEnv};

fn print_grid(h: &straightlab::diagnostics::HeatmapGrid) {
    for r in 0..h.height {
        let row: Vec<String> = (0..h.width).map(|c| h.get(r, c).map_or("   #".into(), |v| format!("{v:4.1}"))).collect();
        println!("  {}", row.join(""));
    }
}

fn main() -> straightlab::Result<()> {
    let umaze = MazeLayout::named("umaze")?;
    let geo = astar_geodesic(&umaze, (3, 1), Connectivity::Four, false)?;
    println!("umaze, goal (3,1):");
    print_grid(&geo);

    let tele = MazeLayout::named("teleport")?;
    for aware in [false, true] {
        println!("teleport maze (3,5) -> (3,1), teleport-aware {aware}: {}", astar_distance(&tele, (3, 5), (3, 1), Connectivity::Four, aware)?);
    }

    let env = NavEnv::umaze();
    let res = 2;
    let grid = env.layout.refined(res);
    let goal = *grid.free_cells().last().unwrap();
    let pixels = latent_heatmap(&IdentityEmbedding, &env, goal, res, FeatureSource::Pooled, "pixels")?;
    let truth = astar_geodesic(&grid, goal, Connectivity::Four, false)?;
    let a = heatmap_agreement(&pixels, &truth)?;
    println!("\npixel distance vs geodesic at resolution {res}, goal {goal:?}: spearman {:.3} over {} cells", a.spearman, a.cells);
    std::fs::write(std::env::temp_dir().join("umaze_geodesic.pgm"), truth.to_pgm())?;
    Ok(())
}
