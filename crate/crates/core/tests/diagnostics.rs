use nalgebra::DMatrix;
use proptest::prelude::*;
use straightlab::diagnostics::{
    curvature_profile, heatmap_agreement, latent_heatmap, mse_to_goal_trace, pca_project, pca_trajectories, spearman, FeatureSource,
    IdentityEmbedding,
};
use straightlab::env::{NavEnv, Observation};
use straightlab::model::CosineVariant;

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

fn states(points: &[[f64; 3]]) -> Vec<Observation> {
    points.iter().map(|p| Observation::State(p.to_vec())).collect()
}

/// Points with a clear eigengap so the components are well defined.
fn cloud() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 4), 6..30)
        .prop_map(|pts| pts.into_iter().map(|p| vec![5.0 * p[0], 2.0 * p[1] + p[0], 0.5 * p[2], 0.1 * p[3]]).collect())
}

proptest! {
    #![proptest_config(cfg(64))]

    #[test]
    fn explained_variance_matches_svd(points in cloud()) {
        let pca = pca_project(&points, 4).unwrap();
        let n = points.len();
        let mut m = DMatrix::from_fn(n, 4, |r, c| points[r][c]);
        let mean = m.row_mean();
        for mut row in m.row_iter_mut() {
            row -= &mean;
        }
        let sv = m.singular_values();
        let total: f64 = sv.iter().map(|s| s * s).sum();
        let mut want: Vec<f64> = sv.iter().map(|s| s * s / total).collect();
        want.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in pca.explained.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        prop_assert!(pca.explained.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn trajectory_order_does_not_change_the_projection(points in cloud(), split in 1usize..5) {
        let split = split.min(points.len() - 1);
        let a = vec![points[..split].to_vec(), points[split..].to_vec()];
        let b = vec![points[split..].to_vec(), points[..split].to_vec()];
        let (pa, ca) = pca_trajectories(&a, 2).unwrap();
        let (pb, cb) = pca_trajectories(&b, 2).unwrap();
        for (u, v) in pa.components.iter().zip(&pb.components) {
            for (x, y) in u.iter().zip(v) {
                prop_assert!((x - y).abs() < 1e-8);
            }
        }
        for (x, y) in ca[0].iter().flatten().zip(cb[1].iter().flatten()) {
            prop_assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn spearman_is_rank_invariant(x in prop::collection::vec(-10.0..10.0f64, 3..20)) {
        prop_assume!(x.iter().any(|v| (v - x[0]).abs() > 1e-9));
        let cubed: Vec<f64> = x.iter().map(|v| v * v * v + 2.0 * v).collect();
        prop_assert!((spearman(&x, &cubed).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn straight_and_reversing_paths() {
    let line = states(&[[0.0, 0.0, 0.0], [1.0, 2.0, 0.5], [2.0, 4.0, 1.0], [3.0, 6.0, 1.5]]);
    let p = curvature_profile(&IdentityEmbedding, &line, CosineVariant::Flatten).unwrap();
    assert!(p.cosines.iter().all(|c| (c - 1.0).abs() < 1e-12));
    let back = states(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
    let p = curvature_profile(&IdentityEmbedding, &back, CosineVariant::Flatten).unwrap();
    assert!((p.cosines[0] + 1.0).abs() < 1e-12);
}

#[test]
fn approaching_the_goal_decreases_distance() {
    let frames = states(&[[4.0, 0.0, 0.0], [3.0, 0.0, 0.0], [2.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    let goal = Observation::State(vec![0.0, 0.0, 0.0]);
    let t = mse_to_goal_trace(&IdentityEmbedding, &frames, &goal).unwrap();
    assert_eq!(t.values, vec![16.0, 9.0, 4.0, 1.0]);
    assert_eq!(t.decreasing_fraction, 1.0);
}

#[test]
fn pixel_heatmap_is_zero_at_the_goal_only() {
    let env = NavEnv::umaze();
    let h = latent_heatmap(&IdentityEmbedding, &env, (3, 1), 1, FeatureSource::Pooled, "pixels").unwrap();
    assert_eq!(h.get(3, 1), Some(0.0));
    assert_eq!(h.argmin(), Some((3, 1)));
    assert!(h.cells().filter(|c| (c.0, c.1) != (3, 1)).all(|c| c.2 > 0.0));
    assert_eq!(h.get(0, 0), None);
    let a = heatmap_agreement(&h, &h).unwrap();
    assert!((a.spearman - 1.0).abs() < 1e-12 && a.cells == 7);
}
