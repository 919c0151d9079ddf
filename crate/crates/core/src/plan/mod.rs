//! Action-sequence optimization through latent dynamics: gradient descent
//! with Adam and the cross-entropy method, plus open-loop and receding-horizon
//! execution in a real environment.
//!
//! Planners work in normalized action units, `[-1, 1]` per component; the
//! environment's action limit converts them to raw actions at execution time.

mod control;
mod oracle;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use control::{
    default_mpc_steps, eval_csv_header, run_mpc, run_mpc_batch, run_open_loop, run_open_loop_batch, success_curve_csv, EvalMode, EvalRecord, MpcOutcome,
    PlanResult, PlanTask,
};
pub use oracle::{LinearEnv, LinearOracle};

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::grad::{AdamState, Graph, Tensor, Var};
use crate::model::WorldModel;

/// Differentiable latent dynamics a planner can roll out.
pub trait LatentDynamics {
    /// History frames `K` consumed per prediction.
    fn history(&self) -> usize;
    /// Width of one normalized action chunk.
    fn chunk_dim(&self) -> usize;
    /// Raw environment steps per chunk.
    fn frameskip(&self) -> usize;
    fn latent_dim(&self) -> usize;
    fn encode_observation(&self, obs: &Observation) -> Result<Vec<f64>>;
    /// Batched rollout: `zs` are `K` `[N, latent]` nodes, `past` the `K − 1`
    /// previous chunks and `future` the planned chunks, each `[N, chunk]`.
    fn rollout_on(&self, g: &mut Graph, zs: &[Var], past: &[Var], future: &[Var]) -> Result<Vec<Var>>;
}

impl LatentDynamics for WorldModel {
    fn history(&self) -> usize {
        self.config().history
    }

    fn chunk_dim(&self) -> usize {
        self.config().chunk_dim()
    }

    fn frameskip(&self) -> usize {
        self.config().frameskip
    }

    fn latent_dim(&self) -> usize {
        self.config().latent_dim()
    }

    fn encode_observation(&self, obs: &Observation) -> Result<Vec<f64>> {
        Ok(self.encode(obs)?.data)
    }

    fn rollout_on(&self, g: &mut Graph, zs: &[Var], past: &[Var], future: &[Var]) -> Result<Vec<Var>> {
        let b = self.bind(g, false);
        self.rollout_graph(g, &b, zs, past, future)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Optimizer {
    #[default]
    Gd,
    Cem,
}

impl std::str::FromStr for Optimizer {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gd" => Ok(Self::Gd),
            "cem" => Ok(Self::Cem),
            _ => Err(format!("expected gd|cem, got '{s}'")),
        }
    }
}

impl std::fmt::Display for Optimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gd => "gd",
            Self::Cem => "cem",
        })
    }
}

/// Objective over a planned rollout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cost {
    /// MSE between the last predicted latent and the goal.
    Terminal,
    /// `Σ γ^{H−t} mse_t / Σ γ^{H−t}` over every predicted latent.
    Weighted(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanConfig {
    /// Model steps per plan.
    pub horizon: usize,
    pub optimizer: Optimizer,
    pub gd_lr: f64,
    pub gd_steps: usize,
    /// Standard deviation of a Gaussian initial plan; 0 means zero init.
    pub gd_init_std: f64,
    pub cem_population: usize,
    pub cem_iterations: usize,
    pub cem_elite_fraction: f64,
    pub cem_init_std: f64,
    /// Intermediate-step discount of the receding-horizon objective.
    pub gamma: f64,
    pub seed: u64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            horizon: 5,
            optimizer: Optimizer::Gd,
            gd_lr: 0.01,
            gd_steps: 100,
            gd_init_std: 0.0,
            cem_population: 200,
            cem_iterations: 10,
            cem_elite_fraction: 0.1,
            cem_init_std: 0.5,
            gamma: 0.9,
            seed: 0,
        }
    }
}

impl PlanConfig {
    pub fn elites(&self) -> usize {
        ((self.cem_population as f64 * self.cem_elite_fraction).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.horizon == 0 {
            bad.push("horizon must be >= 1".to_string());
        }
        if !(self.gd_lr > 0.0) {
            bad.push("gd_lr must be > 0".into());
        }
        if self.gd_steps == 0 {
            bad.push("gd_steps must be >= 1".into());
        }
        if !(self.gd_init_std >= 0.0) {
            bad.push("gd_init_std must be >= 0".into());
        }
        if self.cem_iterations == 0 {
            bad.push("cem_iterations must be >= 1".into());
        }
        if self.elites() >= self.cem_population {
            bad.push(format!("cem_population {} must exceed elites {}", self.cem_population, self.elites()));
        }
        if !(self.cem_init_std > 0.0) {
            bad.push("cem_init_std must be > 0".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            bad.push(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

/// Encoded planning state: history window, previous chunks and goal latent.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanProblem {
    /// `K` latents, oldest first.
    pub latents: Vec<Vec<f64>>,
    /// `K − 1` previous normalized chunks.
    pub past: Vec<Vec<f64>>,
    pub goal: Vec<f64>,
}

impl PlanProblem {
    /// History for a fresh start: `z0` repeated with zero chunks, as for an agent at rest.
    pub fn from_start<M: LatentDynamics + ?Sized>(model: &M, z0: Vec<f64>, goal: Vec<f64>) -> Self {
        let k = model.history();
        Self { latents: vec![z0; k], past: vec![vec![0.0; model.chunk_dim()]; k - 1], goal }
    }

    /// Slides the window after executing `chunk` and observing `z`.
    pub fn advance(&mut self, z: Vec<f64>, chunk: Vec<f64>) {
        self.latents.remove(0);
        self.latents.push(z);
        if !self.past.is_empty() {
            self.past.remove(0);
            self.past.push(chunk);
        }
    }
}

/// Optimizer output for one problem.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanOutput {
    /// `H` normalized chunks.
    pub actions: Vec<Vec<f64>>,
    /// Cost at every optimizer step (GD) or best sample cost per iteration (CEM).
    pub cost_trace: Vec<f64>,
    /// Cost of the returned actions.
    pub cost: f64,
    /// Mean sampling std per iteration (CEM only).
    pub std_trace: Vec<f64>,
    /// Set when optimization aborted.
    pub diagnostic: Option<String>,
}

impl PlanOutput {
    /// Running minimum of the cost trace.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.cost_trace
            .iter()
            .scan(f64::INFINITY, |best, &c| {
                *best = best.min(c);
                Some(*best)
            })
            .collect()
    }

    fn failed(h: usize, chunk: usize, why: String) -> Self {
        Self { actions: vec![vec![0.0; chunk]; h], cost_trace: vec![], cost: f64::INFINITY, std_trace: vec![], diagnostic: Some(why) }
    }
}

/// Per-row costs `[N]` of `N` plans given as one `[N, H·chunk]` node.
fn cost_rows<M: LatentDynamics + ?Sized>(
    model: &M,
    g: &mut Graph,
    problems: &[&PlanProblem],
    plan: Var,
    horizon: usize,
    cost: Cost,
) -> Result<Var> {
    let n = problems.len();
    let (k, c, l) = (model.history(), model.chunk_dim(), model.latent_dim());
    let stack = |rows: Vec<&[f64]>, width: usize| -> Result<Tensor> {
        if let Some(r) = rows.iter().find(|r| r.len() != width) {
            return Err(Error::dim("plan", format!("row of length {}, expected {width}", r.len())));
        }
        Tensor::matrix(rows.len(), width, rows.concat())
    };
    let mut zs = Vec::with_capacity(k);
    for j in 0..k {
        let t = stack(problems.iter().map(|p| p.latents[j].as_slice()).collect(), l)?;
        zs.push(g.constant(t));
    }
    let mut past = Vec::with_capacity(k - 1);
    for j in 0..k - 1 {
        let t = stack(problems.iter().map(|p| p.past[j].as_slice()).collect(), c)?;
        past.push(g.constant(t));
    }
    let goal = g.constant(stack(problems.iter().map(|p| p.goal.as_slice()).collect(), l)?);
    let future = (0..horizon).map(|t| g.slice(plan, t * c, (t + 1) * c)).collect::<Result<Vec<_>>>()?;
    let out = model.rollout_on(g, &zs, &past, &future)?;
    match cost {
        Cost::Terminal => g.mse_rows(out[horizon - 1], goal),
        Cost::Weighted(gamma) => {
            let weights: Vec<f64> = (1..=horizon).map(|t| gamma.powi((horizon - t) as i32)).collect();
            let total: f64 = weights.iter().sum();
            let mut acc: Option<Var> = None;
            for (t, w) in weights.iter().enumerate() {
                let m = g.mse_rows(out[t], goal)?;
                let m = g.scale(m, w / total)?;
                acc = Some(match acc {
                    Some(a) => g.add(a, m)?,
                    None => m,
                });
            }
            Ok(acc.expect("horizon >= 1"))
        }
    }
    .map(|v| {
        debug_assert_eq!(g.value(v).len(), n);
        v
    })
}

fn flatten_plan(actions: &[Vec<f64>], horizon: usize, chunk: usize) -> Result<Vec<f64>> {
    if actions.len() < horizon || actions[..horizon].iter().any(|a| a.len() != chunk) {
        return Err(Error::dim("plan", format!("need {horizon} chunks of width {chunk}")));
    }
    Ok(actions[..horizon].concat())
}

/// Cost of an action sequence. Chunks past `horizon` are ignored.
pub fn plan_cost<M: LatentDynamics + ?Sized>(model: &M, problem: &PlanProblem, actions: &[Vec<f64>], horizon: usize, cost: Cost) -> Result<f64> {
    Ok(plan_cost_grad(model, problem, actions, horizon, cost)?.0)
}

/// Cost and its gradient with respect to each of the first `horizon` chunks.
pub fn plan_cost_grad<M: LatentDynamics + ?Sized>(
    model: &M,
    problem: &PlanProblem,
    actions: &[Vec<f64>],
    horizon: usize,
    cost: Cost,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let c = model.chunk_dim();
    let flat = flatten_plan(actions, horizon, c)?;
    let mut g = Graph::new();
    let plan = g.param(Tensor::matrix(1, horizon * c, flat)?);
    let rows = cost_rows(model, &mut g, &[problem], plan, horizon, cost)?;
    let total = g.sum(rows)?;
    let grads = g.backward(total)?;
    let grad = grads.get_or_zeros(plan, g.value(plan));
    Ok((g.value(total).data()[0], grad.data().chunks(c).map(<[f64]>::to_vec).collect()))
}

pub fn terminal_cost<M: LatentDynamics + ?Sized>(model: &M, problem: &PlanProblem, actions: &[Vec<f64>], horizon: usize) -> Result<f64> {
    plan_cost(model, problem, actions, horizon, Cost::Terminal)
}

pub fn weighted_cost<M: LatentDynamics + ?Sized>(model: &M, problem: &PlanProblem, actions: &[Vec<f64>], horizon: usize, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Contract(format!("gamma must be in (0, 1], got {gamma}")));
    }
    plan_cost(model, problem, actions, horizon, Cost::Weighted(gamma))
}

/// Gradient descent with Adam, one independent plan per problem. Rows never
/// interact (the model is frozen and Adam is elementwise), so batching is only
/// a speedup. Actions are clipped to `[-1, 1]` after every step and the
/// lowest-cost iterate is returned.
pub fn plan_gd_batch<M: LatentDynamics + ?Sized>(model: &M, problems: &[&PlanProblem], cfg: &PlanConfig, cost: Cost) -> Result<Vec<PlanOutput>> {
    cfg.validate()?;
    let (h, c) = (cfg.horizon, model.chunk_dim());
    let n = problems.len();
    if n == 0 {
        return Ok(vec![]);
    }
    let width = h * c;
    let init = if cfg.gd_init_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        (0..n * width)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (cfg.gd_init_std * z).clamp(-1.0, 1.0)
            })
            .collect()
    } else {
        vec![0.0; n * width]
    };
    let mut params = vec![Tensor::matrix(n, width, init)?];
    let mut adam = AdamState::new(&params, cfg.gd_lr);
    let mut traces = vec![Vec::with_capacity(cfg.gd_steps + 1); n];
    let mut best: Vec<(f64, Vec<f64>)> = vec![(f64::INFINITY, vec![]); n];
    let result = (|| -> Result<()> {
        for step in 0..=cfg.gd_steps {
            let mut g = Graph::new();
            let plan = g.param(params[0].clone());
            let rows = cost_rows(model, &mut g, problems, plan, h, cost)?;
            let costs = g.value(rows).data().to_vec();
            for (i, &ci) in costs.iter().enumerate() {
                if step < cfg.gd_steps {
                    traces[i].push(ci);
                }
                if ci < best[i].0 {
                    best[i] = (ci, params[0].row_slice(i).to_vec());
                }
            }
            if step == cfg.gd_steps {
                break;
            }
            let total = g.sum(rows)?;
            let grads = g.backward(total)?;
            let grad = grads.get_or_zeros(plan, g.value(plan));
            adam.step(&mut params, &[grad])?;
            for v in params[0].data_mut() {
                *v = v.clamp(-1.0, 1.0);
            }
        }
        Ok(())
    })();
    if let Err(e) = result {
        let why = format!("{}: {e}", e.class());
        return Ok((0..n).map(|_| PlanOutput::failed(h, c, why.clone())).collect());
    }
    Ok(best
        .into_iter()
        .zip(traces)
        .map(|((cost, flat), cost_trace)| PlanOutput {
            actions: flat.chunks(c).map(<[f64]>::to_vec).collect(),
            cost_trace,
            cost,
            std_trace: vec![],
            diagnostic: None,
        })
        .collect())
}

pub fn plan_gd<M: LatentDynamics + ?Sized>(model: &M, problem: &PlanProblem, cfg: &PlanConfig, cost: Cost) -> Result<PlanOutput> {
    Ok(plan_gd_batch(model, &[problem], cfg, cost)?.pop().expect("one problem"))
}

/// Cross-entropy method with a diagonal Gaussian over the flattened plan.
/// Samples are clipped to `[-1, 1]`; the mean and std are refit to the elites
/// each iteration and the final mean is returned.
pub fn plan_cem<M: LatentDynamics + ?Sized>(model: &M, problem: &PlanProblem, cfg: &PlanConfig, cost: Cost, stream: u64) -> Result<PlanOutput> {
    cfg.validate()?;
    let (h, c) = (cfg.horizon, model.chunk_dim());
    let width = h * c;
    let pop = cfg.cem_population;
    let elites = cfg.elites();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let mut mean = vec![0.0; width];
    let mut std = vec![cfg.cem_init_std; width];
    let mut cost_trace = Vec::with_capacity(cfg.cem_iterations);
    let mut std_trace = Vec::with_capacity(cfg.cem_iterations);
    let batch: Vec<&PlanProblem> = vec![problem; pop];
    let evaluate = |samples: &[f64], rows: usize| -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let plan = g.constant(Tensor::matrix(rows, width, samples.to_vec())?);
        let out = cost_rows(model, &mut g, &batch[..rows], plan, h, cost)?;
        Ok(g.value(out).data().to_vec())
    };
    for _ in 0..cfg.cem_iterations {
        let samples: Vec<f64> = (0..pop * width)
            .map(|i| {
                let j = i % width;
                let z: f64 = StandardNormal.sample(&mut rng);
                (mean[j] + std[j] * z).clamp(-1.0, 1.0)
            })
            .collect();
        let costs = match evaluate(&samples, pop) {
            Ok(costs) => costs,
            Err(e) => return Ok(PlanOutput::failed(h, c, format!("{}: {e}", e.class()))),
        };
        let mut order: Vec<usize> = (0..pop).collect();
        order.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(a.cmp(&b)));
        cost_trace.push(costs[order[0]]);
        for j in 0..width {
            let vals: Vec<f64> = order[..elites].iter().map(|&r| samples[r * width + j]).collect();
            let m = vals.iter().sum::<f64>() / elites as f64;
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / elites as f64;
            mean[j] = m;
            std[j] = var.sqrt();
        }
        std_trace.push(std.iter().sum::<f64>() / width as f64);
    }
    let final_cost = match evaluate(&mean, 1) {
        Ok(v) => v[0],
        Err(e) => return Ok(PlanOutput::failed(h, c, format!("{}: {e}", e.class()))),
    };
    Ok(PlanOutput { actions: mean.chunks(c).map(<[f64]>::to_vec).collect(), cost_trace, cost: final_cost, std_trace, diagnostic: None })
}

/// Runs the configured optimizer on each problem; `streams[i]` seeds CEM for problem `i`.
pub fn plan_batch<M: LatentDynamics + ?Sized>(model: &M, problems: &[&PlanProblem], streams: &[u64], cfg: &PlanConfig, cost: Cost) -> Result<Vec<PlanOutput>> {
    match cfg.optimizer {
        Optimizer::Gd => plan_gd_batch(model, problems, cfg, cost),
        Optimizer::Cem => problems.iter().zip(streams).map(|(p, &s)| plan_cem(model, p, cfg, cost, s)).collect(),
    }
}
