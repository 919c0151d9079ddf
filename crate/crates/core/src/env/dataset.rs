use std::fs;
use std::path::Path;

use super::{EnvKind, EnvState, MazeLayout, NavEnv, Observation, IMAGE_CHANNELS};
use crate::error::{Error, Result};
use crate::io::{Reader, Writer};

const MAGIC: &[u8; 4] = b"STPL";
const VERSION: u32 = 1;
const PAYLOAD_STATES: u32 = 0;
const PAYLOAD_WITH_IMAGES: u32 = 1;

/// One recorded rollout. Observations are rendered from `states` on demand.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `T + 1` ground-truth states.
    pub states: Vec<EnvState>,
    /// `T` raw actions.
    pub actions: Vec<[f64; 2]>,
}

impl Trajectory {
    /// Number of transitions `T`.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn observation(&self, env: &NavEnv, t: usize) -> Observation {
        env.observe_state(&self.states[t])
    }

    pub fn observations(&self, env: &NavEnv) -> Vec<Observation> {
        self.states.iter().map(|s| env.observe_state(s)).collect()
    }

    /// Whether every transition replays bit-exactly under `env`.
    pub fn replays(&self, env: &NavEnv) -> bool {
        self.states.len() == self.actions.len() + 1
            && self.actions.iter().enumerate().all(|(t, a)| env.step_recorded(&self.states[t], *a) == self.states[t + 1])
    }

    /// Raw actions `t·f .. (t+1)·f` flattened into one model-level chunk.
    pub fn action_chunk(&self, t: usize, frameskip: usize) -> Vec<f64> {
        self.actions[t * frameskip..(t + 1) * frameskip].iter().flat_map(|a| a.iter().copied()).collect()
    }
}

/// Offline dataset of random rollouts in one environment.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub env: NavEnv,
    pub seed: u64,
    pub trajectories: Vec<Trajectory>,
}

/// Uniform random starts, actions uniform within bounds and held for
/// `env.frameskip` steps. Trajectory `i` draws from ChaCha stream `i` of `seed`.
pub fn generate_dataset(env: &NavEnv, n_traj: usize, traj_len: usize, seed: u64) -> Result<Dataset> {
    if n_traj == 0 || traj_len == 0 {
        return Err(Error::Contract(format!("dataset needs n_traj > 0 and traj_len > 0, got {n_traj} x {traj_len}")));
    }
    let trajectories = (0..n_traj)
        .map(|i| {
            let mut rng = NavEnv::rng(seed, i as u64);
            let start = env.sample_start(&mut rng);
            let (states, actions) = env.random_rollout(start, traj_len, &mut rng);
            Trajectory { states, actions }
        })
        .collect();
    Ok(Dataset { env: env.clone(), seed, trajectories })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn traj_len(&self) -> usize {
        self.trajectories.first().map_or(0, Trajectory::len)
    }

    /// Splits trajectory indices into (train, held-out): the held-out part is
    /// the last `fraction` of trajectories, at least one.
    pub fn split(&self, fraction: f64) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let n = self.len();
        let held = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
        (0..n - held, n - held..n)
    }

    pub fn to_bytes(&self, with_images: bool) -> Vec<u8> {
        let mut w = Writer::default();
        let t = self.traj_len();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u32(self.len() as u32);
        w.u32(t as u32);
        let obs_shape = [IMAGE_CHANNELS, self.env.render.size, self.env.render.size];
        w.u32(obs_shape.len() as u32);
        for d in obs_shape {
            w.u32(d as u32);
        }
        w.u32(2);
        w.u32(4);
        w.u32(self.env.kind.code());
        w.str(self.env.layout.name());
        w.str(&self.env.layout.to_ascii());
        w.f64(self.env.layout.cell_size());
        w.f64(self.env.layout.origin()[0]);
        w.f64(self.env.layout.origin()[1]);
        w.u32(self.env.frameskip as u32);
        w.u64(self.seed);
        w.u32(if with_images { PAYLOAD_WITH_IMAGES } else { PAYLOAD_STATES });
        for traj in &self.trajectories {
            for s in &traj.states {
                for v in s.to_vec() {
                    w.f32(v as f32);
                }
            }
            for a in &traj.actions {
                w.f32(a[0] as f32);
                w.f32(a[1] as f32);
            }
            if with_images {
                for s in &traj.states {
                    for &v in self.env.render_state(s).as_slice() {
                        w.f32(v as f32);
                    }
                }
            }
        }
        w.buf
    }

    pub fn save(&self, path: &Path, with_images: bool) -> Result<()> {
        fs::write(path, self.to_bytes(with_images)).map_err(Error::from)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|detail| Error::Format { path: path.display().to_string(), detail })
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err("bad magic (expected STPL)".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let n_traj = r.u32()? as usize;
        let traj_len = r.u32()? as usize;
        let rank = r.u32()? as usize;
        let obs_shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let action_dim = r.u32()?;
        let state_dim = r.u32()?;
        if action_dim != 2 || state_dim != 4 {
            return Err(format!("unsupported action/state dims {action_dim}/{state_dim}"));
        }
        let kind = EnvKind::from_code(r.u32()?).ok_or("unknown env kind")?;
        let name = r.str()?;
        let ascii = r.str()?;
        let cell_size = r.f64()?;
        let origin = [r.f64()?, r.f64()?];
        let frameskip = r.u32()? as usize;
        let seed = r.u64()?;
        let payload = r.u32()?;
        if payload > PAYLOAD_WITH_IMAGES {
            return Err(format!("unknown payload kind {payload}"));
        }
        let layout = MazeLayout::parse(&name, &ascii, cell_size, origin).map_err(|e| e.to_string())?;
        let mut env = NavEnv::new(kind, layout).map_err(|e| e.to_string())?;
        env.frameskip = frameskip;
        if obs_shape.len() != 3 || obs_shape[0] != IMAGE_CHANNELS || obs_shape[1] != obs_shape[2] {
            return Err(format!("unsupported observation shape {obs_shape:?}"));
        }
        env.render.size = obs_shape[1];
        let image_len: usize = obs_shape.iter().product();
        let mut trajectories = Vec::with_capacity(n_traj);
        for _ in 0..n_traj {
            let mut states = Vec::with_capacity(traj_len + 1);
            for _ in 0..=traj_len {
                let v = [r.f32()?, r.f32()?, r.f32()?, r.f32()?];
                states.push(EnvState { position: [v[0], v[1]], velocity: [v[2], v[3]] });
            }
            let mut actions = Vec::with_capacity(traj_len);
            for _ in 0..traj_len {
                actions.push([r.f32()?, r.f32()?]);
            }
            if payload == PAYLOAD_WITH_IMAGES {
                // images are a cache of the render; skip them
                r.take(4 * image_len * (traj_len + 1))?;
            }
            trajectories.push(Trajectory { states, actions });
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(Self { env, seed, trajectories })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bytes_and_round_trip() {
        let env = NavEnv::umaze();
        let a = generate_dataset(&env, 6, 20, 3).unwrap();
        let b = generate_dataset(&env, 6, 20, 3).unwrap();
        assert_eq!(a.to_bytes(false), b.to_bytes(false));
        let back = Dataset::from_bytes(&a.to_bytes(true)).unwrap();
        assert_eq!(back.trajectories, a.trajectories);
        assert_eq!(back.env.layout, a.env.layout);
        assert_ne!(a.to_bytes(false), generate_dataset(&env, 6, 20, 4).unwrap().to_bytes(false));
    }

    #[test]
    fn transitions_replay_exactly() {
        for env in [NavEnv::wall(), NavEnv::umaze(), NavEnv::teleport()] {
            let d = generate_dataset(&env, 8, 40, 1).unwrap();
            for t in &d.trajectories {
                assert!(t.replays(&env));
                assert!(t.states.iter().all(|s| env.layout.in_free_cell(s.position[0], s.position[1])));
            }
        }
    }

    #[test]
    fn actions_are_held_for_frameskip() {
        let env = NavEnv::wall();
        let d = generate_dataset(&env, 2, 20, 0).unwrap();
        for t in &d.trajectories {
            for (i, a) in t.actions.iter().enumerate() {
                assert_eq!(*a, t.actions[i - i % 5]);
                assert!(a[0].abs() <= 0.05 && a[1].abs() <= 0.05);
            }
        }
    }

    #[test]
    fn truncated_file_is_format_error() {
        let env = NavEnv::wall();
        let bytes = generate_dataset(&env, 2, 5, 0).unwrap().to_bytes(false);
        assert!(Dataset::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Dataset::from_bytes(b"NOPE").is_err());
    }
}
