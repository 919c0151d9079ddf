use straightlab::env::{generate_dataset, NavEnv};
use straightlab::model::{ModelConfig, WorldModel};
use straightlab::train::{collapse_check, probe_observations, train, TrainConfig};

#[test]
fn unregularized_training_halves_prediction_loss_on_wall() {
    let env = NavEnv::wall();
    let (n, t) = env.default_dataset_size();
    for seed in 0..3 {
        let data = generate_dataset(&env, n, t, seed).unwrap();
        let mut model = WorldModel::new(ModelConfig::default(), seed).unwrap();
        let report = train(&mut model, &data, &TrainConfig { lambda: 0.0, seed, ..TrainConfig::default() }).unwrap();
        let first = report.epochs.first().unwrap();
        let last = report.last().unwrap();
        assert_eq!(report.epochs.len(), 20);
        // the curvature term is still measured even though it does not train
        assert!(report.epochs.iter().all(|e| e.l_curv.is_finite()));
        assert!(last.l_pred <= 0.5 * first.l_pred, "seed {seed}: {} -> {}", first.l_pred, last.l_pred);
        assert!(collapse_check(&model, &probe_observations(&env, 200, seed)).unwrap().passed);
    }
}

#[test]
fn training_is_deterministic() {
    let env = NavEnv::umaze();
    let data = generate_dataset(&env, 24, 30, 5).unwrap();
    let cfg = TrainConfig { epochs: 2, seed: 5, ..TrainConfig::default() };
    let run = || {
        let mut m = WorldModel::new(ModelConfig::default(), 5).unwrap();
        let r = train(&mut m, &data, &cfg).unwrap();
        (m.to_bytes(), r)
    };
    assert_eq!(run(), run());
}

#[test]
fn constant_encoder_fails_the_collapse_check() {
    let env = NavEnv::umaze();
    let mut m = WorldModel::new(ModelConfig::default(), 0).unwrap();
    for p in m.params_mut() {
        p.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let probes = probe_observations(&env, 120, 0);
    let report = collapse_check(&m, &probes).unwrap();
    assert!(!report.passed && report.mean_variance == 0.0);
    assert!(collapse_check(&m, &probes[..50]).is_err());
}

#[test]
fn invalid_settings_are_listed_together() {
    let cfg = TrainConfig { lambda: -1.0, batch_size: 0, windows_per_traj: Some(0), ..TrainConfig::default() };
    let err = cfg.validate().unwrap_err().to_string();
    for key in ["lambda", "batch_size", "windows_per_traj"] {
        assert!(err.contains(key), "{err}");
    }
}
