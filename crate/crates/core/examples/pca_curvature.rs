//! Projects encoded trajectories onto their principal components and traces
//! the straightening cosine along each one.

use straightlab::diagnostics::{curvature_profile, frameskipped, pca_trajectories, Embedding};
use straightlab::env::{generate_dataset, NavEnv};
use straightlab::model::{CosineVariant, ModelConfig, WorldModel};

fn main() -> straightlab::Result<()> {
    let env = NavEnv::wall();
    let data = generate_dataset(&env, 4, 60, 11)?;
    let model = WorldModel::new(ModelConfig::default(), 0)?;
    let fs = model.config().frameskip;

    let mut latents = Vec::new();
    for (i, traj) in data.trajectories.iter().enumerate() {
        let frames = frameskipped(&env, traj, fs);
        let p = curvature_profile(&model, &frames, CosineVariant::Agg)?;
        println!("trajectory {i}: {} triplets, mean cosine {:+.3}, min {:+.3}", p.cosines.len(), p.mean().unwrap(), p.min().unwrap());
        let z: Vec<Vec<f64>> = frames.iter().map(|o| model.embed(o)).collect::<Result<_, _>>()?;
        latents.push(z.iter().map(|v| model.pooled(v)).collect::<Result<Vec<_>, _>>()?);
    }

    let (pca, coords) = pca_trajectories(&latents, 2)?;
    println!("\nexplained variance of the first two components: {:.3}, {:.3}", pca.explained[0], pca.explained[1]);
    for (i, traj) in coords.iter().enumerate() {
        let (a, b) = (&traj[0], traj.last().unwrap());
        println!("trajectory {i}: ({:+.3}, {:+.3}) -> ({:+.3}, {:+.3})", a[0], a[1], b[0], b[1]);
    }
    Ok(())
}
