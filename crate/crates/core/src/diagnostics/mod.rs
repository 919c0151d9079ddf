//! Embedding-quality instrumentation: curvature profiles, latent distance
//! heatmaps against grid geodesics, rank agreement between the two, PCA
//! projections of latent trajectories and distance-to-goal traces.

mod geodesic;
mod heatmap;

pub use geodesic::{astar_distance, astar_geodesic, Connectivity};
pub use heatmap::{heatmap_agreement, latent_heatmap, pearson, spearman, Agreement, FeatureSource, HeatmapGrid, HeatmapKind};

use std::fmt::Write as _;

use crate::env::{NavEnv, Observation, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::{sym_eig, Matrix};
use crate::model::{CosineVariant, WorldModel};

/// Anything that maps observations to latent vectors and can score the
/// straightness of three consecutive latents.
pub trait Embedding {
    fn embed(&self, obs: &Observation) -> Result<Vec<f64>>;
    /// Global feature used by pooled heatmaps.
    fn pooled(&self, z: &[f64]) -> Result<Vec<f64>>;
    fn cosine(&self, z0: &[f64], z1: &[f64], z2: &[f64], variant: CosineVariant) -> Result<f64>;
}

impl Embedding for WorldModel {
    fn embed(&self, obs: &Observation) -> Result<Vec<f64>> {
        Ok(self.encode(obs)?.data)
    }

    fn pooled(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.pool(z)
    }

    fn cosine(&self, z0: &[f64], z1: &[f64], z2: &[f64], variant: CosineVariant) -> Result<f64> {
        let [a, b, c] = [z0, z1, z2].map(|z| self.latent(z.to_vec()));
        self.straightening_cosine(&a, &b, &c, variant)
    }
}

/// Identity map on state observations. It has no token structure or pooling
/// head, so every cosine variant reduces to the flattened one.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityEmbedding;

impl Embedding for IdentityEmbedding {
    fn embed(&self, obs: &Observation) -> Result<Vec<f64>> {
        Ok(obs.as_slice().to_vec())
    }

    fn pooled(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(z.to_vec())
    }

    fn cosine(&self, z0: &[f64], z1: &[f64], z2: &[f64], _variant: CosineVariant) -> Result<f64> {
        if z0.len() != z1.len() || z1.len() != z2.len() {
            return Err(Error::dim("cosine", format!("latent lengths {}, {}, {}", z0.len(), z1.len(), z2.len())));
        }
        let v0: Vec<f64> = z1.iter().zip(z0).map(|(a, b)| a - b).collect();
        let v1: Vec<f64> = z2.iter().zip(z1).map(|(a, b)| a - b).collect();
        let n0 = norm(&v0);
        let n1 = norm(&v1);
        if n0.min(n1) < 1e-12 {
            return Err(Error::DegenerateVelocity { norm: n0.min(n1) });
        }
        Ok((dot(&v0, &v1) / (n0 * n1)).clamp(-1.0, 1.0))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn sq_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Frames of a recorded trajectory at every `frameskip`-th step.
pub fn frameskipped(env: &NavEnv, traj: &Trajectory, frameskip: usize) -> Vec<Observation> {
    (0..traj.states.len()).step_by(frameskip.max(1)).map(|t| traj.observation(env, t)).collect()
}

/// Straightening cosines along one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureProfile {
    pub variant: CosineVariant,
    /// `C_t` for each scored triplet, in time order.
    pub cosines: Vec<f64>,
    /// Triplet start indices skipped because a velocity vanished.
    pub degenerate: Vec<usize>,
}

impl CurvatureProfile {
    pub fn mean(&self) -> Option<f64> {
        (!self.cosines.is_empty()).then(|| self.cosines.iter().sum::<f64>() / self.cosines.len() as f64)
    }

    pub fn min(&self) -> Option<f64> {
        self.cosines.iter().copied().reduce(f64::min)
    }
}

/// Encodes `frames` and scores every consecutive triplet under `variant`.
/// Triplets with a vanishing velocity (the agent stood still) are recorded
/// in `degenerate` instead of aborting the profile.
pub fn curvature_profile<M: Embedding + ?Sized>(model: &M, frames: &[Observation], variant: CosineVariant) -> Result<CurvatureProfile> {
    if frames.len() < 3 {
        return Err(Error::Contract(format!("curvature profile needs at least 3 frames, got {}", frames.len())));
    }
    let zs = frames.iter().map(|o| model.embed(o)).collect::<Result<Vec<_>>>()?;
    let mut profile = CurvatureProfile { variant, cosines: Vec::new(), degenerate: Vec::new() };
    for (t, w) in zs.windows(3).enumerate() {
        match model.cosine(&w[0], &w[1], &w[2], variant) {
            Ok(c) => profile.cosines.push(c),
            Err(Error::DegenerateVelocity { .. }) => profile.degenerate.push(t),
            Err(e) => return Err(e),
        }
    }
    Ok(profile)
}

/// `‖z_t − z_g‖²` per frame, plus the fraction of steps on which it decreased.
#[derive(Clone, Debug, PartialEq)]
pub struct GoalTrace {
    pub values: Vec<f64>,
    pub decreasing_fraction: f64,
}

pub fn mse_to_goal_trace<M: Embedding + ?Sized>(model: &M, frames: &[Observation], goal: &Observation) -> Result<GoalTrace> {
    let zg = model.embed(goal)?;
    let values = frames.iter().map(|o| model.embed(o).map(|z| sq_distance(&z, &zg))).collect::<Result<Vec<_>>>()?;
    let steps = values.len().saturating_sub(1);
    let down = values.windows(2).filter(|w| w[1] < w[0]).count();
    Ok(GoalTrace { decreasing_fraction: if steps == 0 { 0.0 } else { down as f64 / steps as f64 }, values })
}

/// Principal-component projection of a point set.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit principal directions, largest variance first. Each is signed so
    /// its largest-magnitude entry is positive.
    pub components: Vec<Vec<f64>>,
    /// Share of total variance carried by each component.
    pub explained: Vec<f64>,
    /// Projected coordinates, one row per input point.
    pub coords: Vec<Vec<f64>>,
}

pub fn pca_project(points: &[Vec<f64>], out_dim: usize) -> Result<Pca> {
    if points.len() < 3 {
        return Err(Error::Contract(format!("PCA needs at least 3 points, got {}", points.len())));
    }
    let d = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(Error::dim("pca_project", format!("point of length {}, expected {d}", p.len())));
    }
    if out_dim == 0 || out_dim > d {
        return Err(Error::Contract(format!("out_dim {out_dim} must be in 1..={d}")));
    }
    let n = points.len() as f64;
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / n;
        }
    }
    let mut cov = vec![0.0; d * d];
    for p in points {
        let c: Vec<f64> = p.iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] += c[i] * c[j] / n;
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            cov[i * d + j] = cov[j * d + i];
        }
    }
    let eig = sym_eig(&Matrix::from_vec(d, d, cov)?)?;
    let total: f64 = eig.values.iter().map(|v| v.max(0.0)).sum();
    let mut components = Vec::with_capacity(out_dim);
    for i in 0..out_dim {
        let mut v = eig.vector(i);
        let lead = v.iter().copied().reduce(|a, b| if b.abs() > a.abs() { b } else { a }).unwrap_or(0.0);
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
    }
    let explained = eig.values[..out_dim].iter().map(|v| if total > 0.0 { v.max(0.0) / total } else { 0.0 }).collect();
    let coords = points
        .iter()
        .map(|p| {
            let c: Vec<f64> = p.iter().zip(&mean).map(|(v, m)| v - m).collect();
            components.iter().map(|u| dot(u, &c)).collect()
        })
        .collect();
    Ok(Pca { mean, components, explained, coords })
}

/// `traj_id,t,pc1,pc2` rows for trajectories projected with a shared basis.
pub fn pca_csv(trajectories: &[Vec<Vec<f64>>]) -> String {
    let mut s = String::from("traj_id,t,pc1,pc2\n");
    for (id, traj) in trajectories.iter().enumerate() {
        for (t, p) in traj.iter().enumerate() {
            let pc1 = p.first().copied().unwrap_or(0.0);
            let pc2 = p.get(1).copied().unwrap_or(0.0);
            writeln!(s, "{id},{t},{pc1:.9e},{pc2:.9e}").expect("string write");
        }
    }
    s
}

/// Fits PCA on every frame of every trajectory and splits the coordinates
/// back per trajectory.
pub fn pca_trajectories(latents: &[Vec<Vec<f64>>], out_dim: usize) -> Result<(Pca, Vec<Vec<Vec<f64>>>)> {
    let all: Vec<Vec<f64>> = latents.iter().flatten().cloned().collect();
    let pca = pca_project(&all, out_dim)?;
    let mut rest = pca.coords.as_slice();
    let mut split = Vec::with_capacity(latents.len());
    for traj in latents {
        let (head, tail) = rest.split_at(traj.len());
        split.push(head.to_vec());
        rest = tail;
    }
    Ok((pca, split))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvState;

    fn states(points: &[[f64; 2]]) -> Vec<Observation> {
        points.iter().map(|p| Observation::State(EnvState::at(p[0], p[1]).to_vec())).collect()
    }

    #[test]
    fn straight_line_profile_is_one() {
        let frames = states(&[[0.0, 0.0], [0.1, 0.05], [0.2, 0.1], [0.3, 0.15]]);
        let p = curvature_profile(&IdentityEmbedding, &frames, CosineVariant::Flatten).unwrap();
        assert_eq!(p.cosines.len(), 2);
        assert!(p.cosines.iter().all(|c| (c - 1.0).abs() < 1e-12));
    }

    #[test]
    fn right_angle_is_zero() {
        let frames = states(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]);
        let p = curvature_profile(&IdentityEmbedding, &frames, CosineVariant::Agg).unwrap();
        assert!(p.cosines[0].abs() < 1e-12);
    }

    #[test]
    fn standing_still_is_skipped() {
        let frames = states(&[[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]);
        let p = curvature_profile(&IdentityEmbedding, &frames, CosineVariant::Flatten).unwrap();
        assert_eq!(p.degenerate, vec![0]);
        assert_eq!(p.cosines.len(), 1);
    }

    #[test]
    fn goal_trace_ends_at_zero() {
        let frames = states(&[[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]]);
        let tr = mse_to_goal_trace(&IdentityEmbedding, &frames, &frames[2]).unwrap();
        assert_eq!(tr.values, vec![1.0, 0.25, 0.0]);
        assert_eq!(tr.decreasing_fraction, 1.0);
        let still = states(&[[0.3, 0.3]; 4]);
        let tr = mse_to_goal_trace(&IdentityEmbedding, &still, &frames[0]).unwrap();
        assert!(tr.values.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(tr.decreasing_fraction, 0.0);
    }

    #[test]
    fn collinear_points_have_one_component() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let pca = pca_project(&pts, 2).unwrap();
        assert!(pca.explained[1] < 1e-8);
        assert!(pca.explained.iter().sum::<f64>() <= 1.0 + 1e-12);
        let u = &pca.components[0];
        let lead = u.iter().copied().reduce(|a, b| if b.abs() > a.abs() { b } else { a }).unwrap();
        assert!(lead > 0.0);
    }
}
