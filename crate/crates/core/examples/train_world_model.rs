//! Trains a world model with and without the straightening term on a small
//! UMaze dataset and compares held-out curvature.

use straightlab::env::{generate_dataset, NavEnv};
use straightlab::model::{ModelConfig, WorldModel};
use straightlab::train::{collapse_check, probe_observations, train, TrainConfig};

fn main() -> straightlab::Result<()> {
    let env = NavEnv::umaze();
    let data = generate_dataset(&env, 200, 50, 0)?;
    for lambda in [0.1, 0.0] {
        let mut model = WorldModel::new(ModelConfig::default(), 0)?;
        let cfg = TrainConfig { lambda, epochs: 5, ..TrainConfig::default() };
        let report = train(&mut model, &data, &cfg)?;
        println!("lambda {lambda}: {} parameters, {} steps", model.num_parameters(), report.steps);
        println!("  before: cosine {:+.4}", report.initial.cosine);
        for e in &report.epochs {
            println!("  epoch {:>2}: l_pred {:.5}  l_curv {:.5}  held-out cosine {:+.4}", e.epoch, e.l_pred, e.l_curv, e.heldout.cosine);
        }
        let collapse = collapse_check(&model, &probe_observations(&env, 256, 0))?;
        println!("  latent variance {:.3e}, collapse check passed: {}", collapse.mean_variance, collapse.passed);
    }
    Ok(())
}
