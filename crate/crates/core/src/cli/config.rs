use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::diagnostics::{Connectivity, FeatureSource};
use crate::env::{EnvKind, MazeLayout, NavEnv};
use crate::error::{Error, Result};
use crate::linear::SweepConfig;
use crate::model::ModelConfig;
use crate::plan::{Optimizer, PlanConfig};
use crate::train::TrainConfig;

/// Model keys a run may override. Image size, channels and action width
/// follow from the environment.
const MODEL_KEYS: [&str; 11] = ["patch", "patch_embed", "encoder_hidden", "d_v", "mode", "d_a", "action_hidden", "history", "predictor_hidden", "pool_hidden", "d_h"];

/// Keys that select where outputs go rather than what is computed; they are
/// left out of the configuration hash.
const PLACEMENT_KEYS: [&str; 3] = ["name", "out_dir", "seeds"];

/// Flat `key=value` run configuration shared by every command.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub name: Option<String>,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub env: String,
    /// ASCII layout replacing the builtin one.
    pub layout_path: Option<PathBuf>,
    pub frameskip: usize,
    /// `None`: the environment's default dataset size.
    pub n_traj: Option<usize>,
    pub traj_len: Option<usize>,
    /// Store rendered images in the dataset file instead of re-rendering on load.
    pub dataset_images: bool,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub plan: PlanConfig,
    /// Raw-step budget of sampled goal tasks; the horizon is budget / frameskip.
    pub budget: usize,
    pub n_tasks: usize,
    /// Goal tasks for seed `s` are drawn with seed `s + task_seed_offset`.
    pub task_seed_offset: u64,
    /// `None`: twice the horizon.
    pub mpc_steps: Option<usize>,
    /// Fill the plan wall-time column. Off by default so reruns are byte-identical.
    pub timing: bool,
    pub lin_dim: usize,
    pub lin_eps: f64,
    pub lin_horizon: usize,
    pub lin_b_noise: f64,
    pub sweep: SweepConfig,
    pub heatmap_source: FeatureSource,
    pub heatmap_resolution: usize,
    /// Goal cell on the refined grid; `None` picks the last free cell.
    pub heatmap_goal: Option<(usize, usize)>,
    pub connectivity: Connectivity,
    /// `None`: on for the teleport environment only.
    pub teleport_aware: Option<bool>,
    /// Held-out trajectories used by `pca` and `curvature`; `None` uses all.
    pub diag_trajectories: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: None,
            out_dir: PathBuf::from("runs"),
            seeds: vec![0],
            env: "umaze".into(),
            layout_path: None,
            frameskip: crate::env::DEFAULT_FRAMESKIP,
            n_traj: None,
            traj_len: None,
            dataset_images: false,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            plan: PlanConfig::default(),
            budget: 25,
            n_tasks: 50,
            task_seed_offset: 1000,
            mpc_steps: None,
            timing: false,
            lin_dim: 4,
            lin_eps: 0.1,
            lin_horizon: 5,
            lin_b_noise: 0.1,
            sweep: SweepConfig::default(),
            heatmap_source: FeatureSource::Pooled,
            heatmap_resolution: 1,
            heatmap_goal: None,
            connectivity: Connectivity::Four,
            teleport_aware: None,
            diag_trajectories: None,
        }
    }
}

fn auto<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), T::to_string)
}

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<Vec<T>, String> {
    let items = value
        .split(',')
        .map(|s| s.trim().parse::<T>().map_err(|_| format!("{key}: cannot parse '{s}' in list '{value}'")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if items.is_empty() {
        return Err(format!("{key}: empty list"));
    }
    Ok(items)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value.trim().parse::<T>().map_err(|_| format!("{key}: cannot parse '{value}'"))
}

fn parse_auto<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<Option<T>, String> {
    if value.trim() == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(format!("{key}: expected true|false, got '{other}'")),
    }
}

impl RunConfig {
    /// Applies one key. Returns an error message for unknown keys and bad values.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "name" => self.name = (!v.is_empty() && v != "auto").then(|| v.to_string()),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "seeds" => self.seeds = parse_list(key, v)?,
            "env" => {
                if !["wall", "umaze", "medium", "teleport"].contains(&v) {
                    return Err(format!("env: unknown environment '{v}' (expected wall|umaze|medium|teleport)"));
                }
                self.env = v.to_string();
            }
            "layout_path" => self.layout_path = (!v.is_empty() && v != "none").then(|| PathBuf::from(v)),
            "frameskip" => {
                self.frameskip = parse(key, v)?;
                self.model.frameskip = self.frameskip;
            }
            "n_traj" => self.n_traj = parse_auto(key, v)?,
            "traj_len" => self.traj_len = parse_auto(key, v)?,
            "dataset_images" => self.dataset_images = parse_bool(key, v)?,
            k if MODEL_KEYS.contains(&k) => {
                self.model.set(k, v)?;
            }
            "lambda" => self.train.lambda = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "lr_encoder" => self.train.lr_encoder = parse_auto(key, v)?,
            "lr_predictor" => self.train.lr_predictor = parse(key, v)?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "variant" => self.train.variant = v.parse().map_err(|e| format!("variant: {e}"))?,
            "windows_per_traj" => self.train.windows_per_traj = if v == "all" { None } else { Some(parse(key, v)?) },
            "heldout_fraction" => self.train.heldout_fraction = parse(key, v)?,
            "planner" => self.plan.optimizer = v.parse::<Optimizer>().map_err(|e| format!("planner: {e}"))?,
            "budget" => self.budget = parse(key, v)?,
            "n_tasks" => self.n_tasks = parse(key, v)?,
            "task_seed_offset" => self.task_seed_offset = parse(key, v)?,
            "gd_lr" => self.plan.gd_lr = parse(key, v)?,
            "gd_steps" => self.plan.gd_steps = parse(key, v)?,
            "gd_init_std" => self.plan.gd_init_std = parse(key, v)?,
            "cem_population" => self.plan.cem_population = parse(key, v)?,
            "cem_iterations" => self.plan.cem_iterations = parse(key, v)?,
            "cem_elite_fraction" => self.plan.cem_elite_fraction = parse(key, v)?,
            "cem_init_std" => self.plan.cem_init_std = parse(key, v)?,
            "gamma" => self.plan.gamma = parse(key, v)?,
            "mpc_steps" => self.mpc_steps = parse_auto(key, v)?,
            "timing" => self.timing = parse_bool(key, v)?,
            "lin_dim" => self.lin_dim = parse(key, v)?,
            "lin_eps" => self.lin_eps = parse(key, v)?,
            "lin_horizon" => self.lin_horizon = parse(key, v)?,
            "lin_b_noise" => self.lin_b_noise = parse(key, v)?,
            "sweep_draws" => self.sweep.draws = parse(key, v)?,
            "sweep_dim" => self.sweep.state_dim = parse(key, v)?,
            "sweep_eps" => self.sweep.eps_values = parse_list(key, v)?,
            "sweep_horizons" => self.sweep.horizons = parse_list(key, v)?,
            "sweep_b_noise" => self.sweep.b_noise = parse(key, v)?,
            "heatmap_source" => self.heatmap_source = v.parse().map_err(|e| format!("heatmap_source: {e}"))?,
            "heatmap_resolution" => self.heatmap_resolution = parse(key, v)?,
            "heatmap_goal" => {
                self.heatmap_goal = if v == "auto" {
                    None
                } else {
                    match parse_list::<usize>(key, v)?.as_slice() {
                        &[r, c] => Some((r, c)),
                        _ => return Err(format!("heatmap_goal: expected 'row,col' or 'auto', got '{v}'")),
                    }
                }
            }
            "connectivity" => self.connectivity = v.parse().map_err(|e| format!("connectivity: {e}"))?,
            "teleport_aware" => self.teleport_aware = if v == "auto" { None } else { Some(parse_bool(key, v)?) },
            "diag_trajectories" => self.diag_trajectories = parse_auto(key, v)?,
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv: Vec<(String, String)> = vec![
            ("name".into(), self.name.clone().unwrap_or_else(|| "auto".into())),
            ("out_dir".into(), self.out_dir.display().to_string()),
            ("seeds".into(), list(&self.seeds)),
            ("env".into(), self.env.clone()),
            ("layout_path".into(), self.layout_path.as_ref().map_or_else(|| "none".into(), |p| p.display().to_string())),
            ("frameskip".into(), self.frameskip.to_string()),
            ("n_traj".into(), auto(&self.n_traj)),
            ("traj_len".into(), auto(&self.traj_len)),
            ("dataset_images".into(), self.dataset_images.to_string()),
        ];
        for (k, v) in self.model.to_kv() {
            if MODEL_KEYS.contains(&k) {
                kv.push((k.into(), v));
            }
        }
        let t = &self.train;
        let p = &self.plan;
        let rest: Vec<(&str, String)> = vec![
            ("lambda", t.lambda.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("lr_encoder", auto(&t.lr_encoder)),
            ("lr_predictor", t.lr_predictor.to_string()),
            ("epochs", t.epochs.to_string()),
            ("variant", t.variant.to_string()),
            ("windows_per_traj", t.windows_per_traj.map_or("all".to_string(), |n| n.to_string())),
            ("heldout_fraction", t.heldout_fraction.to_string()),
            ("planner", p.optimizer.to_string()),
            ("budget", self.budget.to_string()),
            ("n_tasks", self.n_tasks.to_string()),
            ("task_seed_offset", self.task_seed_offset.to_string()),
            ("gd_lr", p.gd_lr.to_string()),
            ("gd_steps", p.gd_steps.to_string()),
            ("gd_init_std", p.gd_init_std.to_string()),
            ("cem_population", p.cem_population.to_string()),
            ("cem_iterations", p.cem_iterations.to_string()),
            ("cem_elite_fraction", p.cem_elite_fraction.to_string()),
            ("cem_init_std", p.cem_init_std.to_string()),
            ("gamma", p.gamma.to_string()),
            ("mpc_steps", auto(&self.mpc_steps)),
            ("timing", self.timing.to_string()),
            ("lin_dim", self.lin_dim.to_string()),
            ("lin_eps", self.lin_eps.to_string()),
            ("lin_horizon", self.lin_horizon.to_string()),
            ("lin_b_noise", self.lin_b_noise.to_string()),
            ("sweep_draws", self.sweep.draws.to_string()),
            ("sweep_dim", self.sweep.state_dim.to_string()),
            ("sweep_eps", list(&self.sweep.eps_values)),
            ("sweep_horizons", list(&self.sweep.horizons)),
            ("sweep_b_noise", self.sweep.b_noise.to_string()),
            ("heatmap_source", self.heatmap_source.to_string()),
            ("heatmap_resolution", self.heatmap_resolution.to_string()),
            ("heatmap_goal", self.heatmap_goal.map_or_else(|| "auto".into(), |(r, c)| format!("{r},{c}"))),
            ("connectivity", self.connectivity.to_string()),
            ("teleport_aware", auto(&self.teleport_aware)),
            ("diag_trajectories", auto(&self.diag_trajectories)),
        ];
        kv.extend(rest.into_iter().map(|(k, v)| (k.to_string(), v)));
        kv
    }

    pub fn to_text(&self) -> String {
        self.to_kv().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Parses `key=value` lines (`#` starts a comment), then applies
    /// `overrides` in order. Every bad line or value is reported at once.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        let mut bad = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    if let Err(e) = cfg.set(k.trim(), v) {
                        bad.push(format!("line {}: {e}", n + 1));
                    }
                }
                None => bad.push(format!("line {}: expected key=value, got '{line}'", n + 1)),
            }
        }
        for (k, v) in overrides {
            if let Err(e) = cfg.set(k, v) {
                bad.push(format!("override: {e}"));
            }
        }
        if let Err(Error::Config(more)) = cfg.validate() {
            bad.extend(more);
        }
        if bad.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(bad))
        }
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        Self::parse(&fs::read_to_string(path)?, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let mut absorb = |r: Result<()>| {
            if let Err(Error::Config(v)) = r {
                bad.extend(v);
            }
        };
        absorb(self.model.validate());
        absorb(self.train.validate());
        let mut plan = self.plan.clone();
        plan.horizon = self.horizon();
        absorb(plan.validate());
        if self.seeds.is_empty() {
            bad.push("seeds: at least one seed required".into());
        }
        if self.frameskip == 0 {
            bad.push("frameskip must be >= 1".into());
        } else if ![25, 50].contains(&self.budget) || self.budget % self.frameskip != 0 {
            bad.push(format!("budget must be 25 or 50 and a multiple of frameskip {}, got {}", self.frameskip, self.budget));
        }
        if self.n_tasks == 0 {
            bad.push("n_tasks must be >= 1".into());
        }
        if self.n_traj == Some(0) || self.traj_len == Some(0) {
            bad.push("n_traj and traj_len must be >= 1".into());
        }
        if let Some(m) = self.mpc_steps {
            if m < self.horizon() {
                bad.push(format!("mpc_steps {m} must be at least the horizon {}", self.horizon()));
            }
        }
        if self.lin_dim == 0 || self.lin_horizon == 0 {
            bad.push("lin_dim and lin_horizon must be >= 1".into());
        }
        if !(self.lin_eps >= 0.0 && self.lin_eps < 1.0) {
            bad.push(format!("lin_eps must be in [0, 1), got {}", self.lin_eps));
        }
        if self.sweep.state_dim == 0 || self.sweep.horizons.contains(&0) {
            bad.push("sweep_dim and sweep_horizons must be >= 1".into());
        }
        if self.sweep.eps_values.iter().any(|e| !(*e >= 0.0 && *e < 1.0)) {
            bad.push("sweep_eps values must be in [0, 1)".into());
        }
        if self.heatmap_resolution == 0 {
            bad.push("heatmap_resolution must be >= 1".into());
        }
        if self.diag_trajectories == Some(0) {
            bad.push("diag_trajectories must be >= 1".into());
        }
        if let Some(p) = &self.layout_path {
            if !p.exists() {
                bad.push(format!("layout_path: {} does not exist", p.display()));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    pub fn horizon(&self) -> usize {
        self.budget / self.frameskip.max(1)
    }

    /// Planner settings for one seed.
    pub fn plan_config(&self, seed: u64) -> PlanConfig {
        PlanConfig { horizon: self.horizon(), seed, ..self.plan.clone() }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.train.clone() }
    }

    pub fn mpc_steps(&self) -> usize {
        self.mpc_steps.unwrap_or(2 * self.horizon())
    }

    /// First 12 hex digits of the SHA-256 of every key that affects results.
    pub fn hash(&self) -> String {
        let text: String = self
            .to_kv()
            .into_iter()
            .filter(|(k, _)| !PLACEMENT_KEYS.contains(&k.as_str()))
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        hex::encode(Sha256::digest(text.as_bytes()))[..12].to_string()
    }

    pub fn run_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| format!("cfg-{}", self.hash()))
    }

    /// `out_dir/<name>`.
    pub fn run_root(&self) -> PathBuf {
        self.out_dir.join(self.run_name())
    }

    /// `out_dir/<name>/<seed>`.
    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.run_root().join(seed.to_string())
    }

    pub fn environment(&self) -> Result<NavEnv> {
        let mut env = match &self.layout_path {
            None => NavEnv::named(&self.env)?,
            Some(p) => {
                let text = fs::read_to_string(p)?;
                let name = p.file_stem().map_or_else(|| "custom".to_string(), |s| s.to_string_lossy().into_owned());
                let layout = MazeLayout::parse(&name, &text, 1.0, [0.0, 0.0])?;
                let kind = if layout.has_teleport() { EnvKind::Teleport } else { EnvKind::PointMaze };
                NavEnv::new(kind, layout)?
            }
        };
        env.frameskip = self.frameskip;
        Ok(env)
    }

    pub fn dataset_size(&self, env: &NavEnv) -> (usize, usize) {
        let (n, t) = env.default_dataset_size();
        (self.n_traj.unwrap_or(n), self.traj_len.unwrap_or(t))
    }

    pub fn teleport_aware(&self, env: &NavEnv) -> bool {
        self.teleport_aware.unwrap_or(env.kind == EnvKind::Teleport)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let cfg = RunConfig::parse("env=wall\nlambda=0\nseeds=0,1,2\nheatmap_goal=3,4 # comment\n", &[]).unwrap();
        assert_eq!(cfg.env, "wall");
        assert_eq!(cfg.seeds, vec![0, 1, 2]);
        let again = RunConfig::parse(&cfg.to_text(), &[]).unwrap();
        assert_eq!(again.to_text(), cfg.to_text());
        assert_eq!(again.hash(), cfg.hash());
    }

    #[test]
    fn every_bad_key_is_listed() {
        let err = RunConfig::parse("bogus=1\nlambda=-1\nepochs=x\nbudget=30\n", &[("also_bogus".into(), "2".into())]).unwrap_err();
        let Error::Config(list) = err else { panic!("expected config error") };
        let joined = list.join("\n");
        for needle in ["bogus", "epochs", "budget", "also_bogus", "lambda"] {
            assert!(joined.contains(needle), "{needle} missing from {joined}");
        }
    }

    #[test]
    fn placement_keys_do_not_change_hash() {
        let a = RunConfig::parse("name=x\nseeds=1\n", &[]).unwrap();
        let b = RunConfig::parse("out_dir=elsewhere\n", &[]).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig::parse("lambda=0\n", &[]).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn horizon_follows_budget() {
        assert_eq!(RunConfig::parse("budget=50\n", &[]).unwrap().horizon(), 10);
    }
}
