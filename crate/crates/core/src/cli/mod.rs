//! Command pipelines behind the `straightlab` binary. Each command reads a
//! [`RunConfig`], writes its outputs under `out_dir/<name>/<seed>/` and
//! records their checksums in that directory's manifest.

mod config;
mod manifest;

pub use config::RunConfig;
pub use manifest::{sha256_hex, Manifest};

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diagnostics::{
    astar_geodesic, curvature_profile, frameskipped, heatmap_agreement, latent_heatmap, pca_csv, pca_trajectories, Embedding,
};
use crate::env::{sample_goal_tasks, Dataset, NavEnv};
use crate::error::{Error, Result};
use crate::linear::{analyze, constant_speed_actions, cosine_proxy_check, sample_eps_straight, sweep_theorem, ConditioningReport, SweepConfig, SweepDraw};
use crate::model::WorldModel;
use crate::plan::{eval_csv_header, run_mpc_batch, run_open_loop_batch, success_curve_csv, EvalMode, EvalRecord, PlanTask};
use crate::train::{collapse_check, probe_observations, train};

pub const DATASET_FILE: &str = "dataset.stpl";
pub const CHECKPOINT_FILE: &str = "checkpoint.stck";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GenData,
    Train,
    EvalPlan,
    Mpc,
    AnalyzeLinear,
    SweepTheorem,
    Heatmap,
    Pca,
    Curvature,
}

impl Command {
    pub const ALL: [Command; 9] = [
        Command::GenData,
        Command::Train,
        Command::EvalPlan,
        Command::Mpc,
        Command::AnalyzeLinear,
        Command::SweepTheorem,
        Command::Heatmap,
        Command::Pca,
        Command::Curvature,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::EvalPlan => "eval-plan",
            Command::Mpc => "mpc",
            Command::AnalyzeLinear => "analyze-linear",
            Command::SweepTheorem => "sweep-theorem",
            Command::Heatmap => "heatmap",
            Command::Pca => "pca",
            Command::Curvature => "curvature",
        }
    }
}

impl std::str::FromStr for Command {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Command::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| format!("unknown command '{s}'"))
    }
}

impl std::fmt::Display for Command {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Files produced by one command for one seed, written together.
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn new(dir: PathBuf) -> Self {
        Self { dir, files: Vec::new() }
    }

    fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), bytes.into()));
    }

    fn commit(self, cfg: &RunConfig, seed_label: &str, cmd: Command) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(&self.dir)?;
        let mut manifest = Manifest::open(&self.dir, cfg, seed_label)?;
        let mut written = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let path = self.dir.join(name);
            fs::write(&path, bytes)?;
            manifest.record(name, bytes, cmd);
            written.push(path);
        }
        manifest.save()?;
        Ok(written)
    }
}

/// Runs `cmd` for every configured seed and returns the written paths.
pub fn run(cmd: Command, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let env = cfg.environment()?;
    let mut written = Vec::new();
    let mut per_seed = Vec::new();
    for &seed in &cfg.seeds {
        let mut out = Outputs::new(cfg.run_dir(seed));
        let summary = match cmd {
            Command::GenData => gen_data(cfg, &env, seed, &mut out)?,
            Command::Train => train_cmd(cfg, &env, seed, &mut out)?,
            Command::EvalPlan => eval_plan(cfg, &env, seed, EvalMode::OpenLoop, &mut out)?,
            Command::Mpc => eval_plan(cfg, &env, seed, EvalMode::Mpc, &mut out)?,
            Command::AnalyzeLinear => analyze_linear(cfg, seed, &mut out)?,
            Command::SweepTheorem => sweep(cfg, seed, &mut out)?,
            Command::Heatmap => heatmap(cfg, &env, seed, &mut out)?,
            Command::Pca => pca(cfg, &env, seed, &mut out)?,
            Command::Curvature => curvature(cfg, &env, seed, &mut out)?,
        };
        written.extend(out.commit(cfg, &seed.to_string(), cmd)?);
        per_seed.push(summary);
    }
    if matches!(cmd, Command::EvalPlan | Command::Mpc) {
        let mode = if cmd == Command::Mpc { EvalMode::Mpc } else { EvalMode::OpenLoop };
        let mut out = Outputs::new(cfg.run_root());
        out.add(&format!("summary_{mode}.csv"), summary_csv(cfg, mode, &per_seed));
        written.extend(out.commit(cfg, &seeds_label(&cfg.seeds), cmd)?);
    }
    Ok(written)
}

fn seeds_label(seeds: &[u64]) -> String {
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
}

pub fn load_dataset(cfg: &RunConfig, seed: u64) -> Result<Dataset> {
    Dataset::load(&cfg.run_dir(seed).join(DATASET_FILE))
}

pub fn load_checkpoint(cfg: &RunConfig, seed: u64) -> Result<WorldModel> {
    WorldModel::load(&cfg.run_dir(seed).join(CHECKPOINT_FILE))
}

/// Success count and mean final distance of one seed's evaluation.
#[derive(Clone, Copy, Debug, Default)]
struct SeedSummary {
    successes: usize,
    tasks: usize,
    mean_distance: f64,
}

fn gen_data(cfg: &RunConfig, env: &NavEnv, seed: u64, out: &mut Outputs) -> Result<SeedSummary> {
    let (n, t) = cfg.dataset_size(env);
    let data = crate::env::generate_dataset(env, n, t, seed)?;
    out.add(DATASET_FILE, data.to_bytes(cfg.dataset_images));
    Ok(SeedSummary::default())
}

fn train_cmd(cfg: &RunConfig, env: &NavEnv, seed: u64, out: &mut Outputs) -> Result<SeedSummary> {
    let data = load_dataset(cfg, seed)?;
    if data.env.frameskip != cfg.frameskip || data.env.layout != env.layout {
        return Err(Error::Contract(format!("dataset for seed {seed} was generated with a different environment or frameskip")));
    }
    let mut model = WorldModel::new(cfg.model.clone(), seed)?;
    let report = train(&mut model, &data, &cfg.train_config(seed))?;
    let probes = probe_observations(env, 256, seed);
    let collapse = collapse_check(&model, &probes)?;
    let last = report.epochs.last().map(|e| e.heldout).unwrap_or(report.initial);
    let mut summary = String::from("initial_cosine,final_cosine,initial_cosine_flatten,final_cosine_flatten,collapse_variance,collapse_pass,steps\n");
    writeln!(
        summary,
        "{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{},{}",
        report.initial.cosine,
        last.cosine,
        report.initial.cosine_flatten,
        last.cosine_flatten,
        collapse.mean_variance,
        collapse.passed,
        report.steps
    )
    .expect("string write");
    out.add(CHECKPOINT_FILE, model.to_bytes());
    out.add("train_report.csv", report.to_csv());
    out.add("train_summary.csv", summary);
    Ok(SeedSummary::default())
}

fn eval_plan(cfg: &RunConfig, env: &NavEnv, seed: u64, mode: EvalMode, out: &mut Outputs) -> Result<SeedSummary> {
    let model = load_checkpoint(cfg, seed)?;
    let tasks = sample_goal_tasks(env, seed + cfg.task_seed_offset, cfg.n_tasks, cfg.budget)?;
    let tasks = PlanTask::from_goal_tasks(&tasks);
    let pc = cfg.plan_config(seed);
    let results = match mode {
        EvalMode::OpenLoop => run_open_loop_batch(&model, env, &tasks, &pc)?,
        EvalMode::Mpc => {
            let outcomes = run_mpc_batch(&model, env, &tasks, &pc, cfg.mpc_steps())?;
            out.add("success_curve.csv", success_curve_csv(&outcomes));
            outcomes.into_iter().map(|o| o.result).collect()
        }
    };
    let mut csv = format!("{}\n", eval_csv_header());
    for (task, r) in tasks.iter().zip(&results) {
        let rec = EvalRecord {
            task_id: task.id,
            seed,
            planner: pc.optimizer,
            mode,
            success: r.success,
            final_distance: r.final_distance,
            plan_seconds: cfg.timing.then_some(r.plan_seconds),
        };
        csv.push_str(&rec.csv_row());
        csv.push('\n');
    }
    out.add(&format!("eval_{mode}.csv"), csv);
    Ok(SeedSummary {
        successes: results.iter().filter(|r| r.success).count(),
        tasks: results.len(),
        mean_distance: results.iter().map(|r| r.final_distance).sum::<f64>() / results.len().max(1) as f64,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len().max(1) as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn summary_csv(cfg: &RunConfig, mode: EvalMode, seeds: &[SeedSummary]) -> String {
    let rates: Vec<f64> = seeds.iter().map(|s| 100.0 * s.successes as f64 / s.tasks.max(1) as f64).collect();
    let dists: Vec<f64> = seeds.iter().map(|s| s.mean_distance).collect();
    let (m, sd) = mean_std(&rates);
    let (dm, _) = mean_std(&dists);
    let per_seed = rates.iter().map(|r| format!("{r:.1}")).collect::<Vec<_>>().join(";");
    format!(
        "env,planner,mode,budget,n_tasks,seeds,success_pct_mean,success_pct_std,per_seed_pct,final_distance_mean\n{},{},{},{},{},{},{:.3},{:.3},{},{:.6e}\n",
        cfg.env,
        cfg.plan.optimizer,
        mode,
        cfg.budget,
        cfg.n_tasks,
        seeds_label(&cfg.seeds).replace(',', ";"),
        m,
        sd,
        per_seed,
        dm
    )
}

fn analyze_linear(cfg: &RunConfig, seed: u64, out: &mut Outputs) -> Result<SeedSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sys = sample_eps_straight(cfg.lin_dim, cfg.lin_eps, cfg.lin_horizon, cfg.lin_b_noise, &mut rng)?;
    let report = analyze(&sys)?;
    out.add("linear_report.csv", format!("{}\n{}\n", ConditioningReport::CSV_HEADER, report.csv_row()));
    let actions = constant_speed_actions(&sys, cfg.lin_horizon.max(2))?;
    let proxy = cosine_proxy_check(&sys, &actions)?;
    let mut csv = String::from("t,cosine,lhs,rhs,holds,speed,constant_speed,delta_a\n");
    for s in &proxy.steps {
        writeln!(
            csv,
            "{},{:.12e},{:.12e},{:.12e},{},{:.12e},{},{:.12e}",
            s.t,
            s.cosine,
            s.lhs,
            s.rhs,
            s.holds(),
            proxy.speed,
            proxy.constant_speed,
            proxy.delta_a
        )
        .expect("string write");
    }
    out.add("linear_proxy.csv", csv);
    Ok(SeedSummary::default())
}

fn sweep(cfg: &RunConfig, seed: u64, out: &mut Outputs) -> Result<SeedSummary> {
    let draws = sweep_theorem(&SweepConfig { seed, ..cfg.sweep.clone() })?;
    let mut csv = format!("{}\n", SweepDraw::CSV_HEADER);
    for d in &draws {
        csv.push_str(&d.csv_row());
        csv.push('\n');
    }
    out.add("sweep.csv", csv);
    let count = |f: fn(&ConditioningReport) -> Option<bool>| draws.iter().filter(|d| f(&d.report) == Some(false)).count();
    let max_err = |f: fn(&ConditioningReport) -> f64| draws.iter().map(|d| f(&d.report)).fold(0.0, f64::max);
    out.add(
        "sweep_summary.csv",
        format!(
            "draws,ratio_violations,power_violations,eps_violations,exp_violations,max_gram_jac_err,max_lemma_rel_err\n{},{},{},{},{},{:.3e},{:.3e}\n",
            draws.len(),
            count(ConditioningReport::ratio_holds),
            count(ConditioningReport::power_holds),
            count(ConditioningReport::eps_holds),
            count(ConditioningReport::exp_holds),
            max_err(|r| r.gramian_jacobian_err),
            max_err(|r| r.hessian_gramian_rel_err),
        ),
    );
    Ok(SeedSummary::default())
}

fn heatmap(cfg: &RunConfig, env: &NavEnv, seed: u64, out: &mut Outputs) -> Result<SeedSummary> {
    let model = load_checkpoint(cfg, seed)?;
    let grid = env.layout.refined(cfg.heatmap_resolution);
    let goal = match cfg.heatmap_goal {
        Some(g) => g,
        None => *grid.free_cells().last().ok_or_else(|| Error::Contract("layout has no free cell".into()))?,
    };
    let label = format!("{}/{seed}", cfg.run_name());
    let latent = latent_heatmap(&model, env, goal, cfg.heatmap_resolution, cfg.heatmap_source, &label)?;
    let teleport = cfg.teleport_aware(env);
    let geo = astar_geodesic(&grid, goal, cfg.connectivity, teleport)?;
    let agree = heatmap_agreement(&latent, &geo)?;
    out.add("heatmap_latent.csv", latent.to_csv());
    out.add("heatmap_latent.pgm", latent.to_pgm());
    out.add("heatmap_geodesic.csv", geo.to_csv());
    out.add("heatmap_geodesic.pgm", geo.to_pgm());
    out.add(
        "heatmap_agreement.csv",
        format!(
            "source,resolution,goal_row,goal_col,connectivity,teleport_aware,spearman,pearson,cells\n{},{},{},{},{},{},{:.9},{:.9},{}\n",
            cfg.heatmap_source, cfg.heatmap_resolution, goal.0, goal.1, cfg.connectivity, teleport, agree.spearman, agree.pearson, agree.cells
        ),
    );
    Ok(SeedSummary::default())
}

/// Held-out trajectories of the seed's dataset, capped by `diag_trajectories`.
fn heldout(cfg: &RunConfig, data: &Dataset) -> Vec<usize> {
    let (_, held) = data.split(cfg.train.heldout_fraction);
    held.take(cfg.diag_trajectories.unwrap_or(usize::MAX)).collect()
}

fn pca(cfg: &RunConfig, env: &NavEnv, seed: u64, out: &mut Outputs) -> Result<SeedSummary> {
    let model = load_checkpoint(cfg, seed)?;
    let data = load_dataset(cfg, seed)?;
    let latents = heldout(cfg, &data)
        .into_iter()
        .map(|i| frameskipped(env, &data.trajectories[i], cfg.frameskip).iter().map(|o| model.embed(o)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let (fit, coords) = pca_trajectories(&latents, 2)?;
    out.add("pca.csv", pca_csv(&coords));
    let mut var = String::from("component,explained\n");
    for (i, e) in fit.explained.iter().enumerate() {
        writeln!(var, "{},{e:.9e}", i + 1).expect("string write");
    }
    out.add("pca_variance.csv", var);
    Ok(SeedSummary::default())
}

fn curvature(cfg: &RunConfig, env: &NavEnv, seed: u64, out: &mut Outputs) -> Result<SeedSummary> {
    let model = load_checkpoint(cfg, seed)?;
    let data = load_dataset(cfg, seed)?;
    let variant = cfg.train.variant;
    let mut csv = String::from("traj_id,t,cosine\n");
    let (mut all, mut degenerate, mut n_traj) = (Vec::new(), 0usize, 0usize);
    for i in heldout(cfg, &data) {
        let frames = frameskipped(env, &data.trajectories[i], cfg.frameskip);
        let profile = curvature_profile(&model, &frames, variant)?;
        let mut t = 0;
        for k in 0..frames.len() - 2 {
            if profile.degenerate.contains(&k) {
                continue;
            }
            writeln!(csv, "{i},{k},{:.9e}", profile.cosines[t]).expect("string write");
            t += 1;
        }
        degenerate += profile.degenerate.len();
        all.extend(profile.cosines);
        n_traj += 1;
    }
    let (mean, _) = mean_std(&all);
    let min = all.iter().copied().fold(f64::INFINITY, f64::min);
    out.add("curvature.csv", csv);
    out.add(
        "curvature_summary.csv",
        format!("variant,trajectories,triplets,degenerate,mean,min\n{variant},{n_traj},{},{degenerate},{mean:.9e},{min:.9e}\n", all.len()),
    );
    Ok(SeedSummary::default())
}
