use std::fmt::Write as _;
use std::time::Instant;

use super::{plan_batch, Cost, LatentDynamics, Optimizer, PlanConfig, PlanProblem};
use crate::env::{Environment, GoalTask};
use crate::error::{Error, Result};

/// Start and goal states for one planning episode.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanTask<S> {
    pub id: usize,
    pub start: S,
    pub goal: S,
}

impl From<&GoalTask> for PlanTask<crate::env::EnvState> {
    fn from(t: &GoalTask) -> Self {
        Self { id: t.id, start: t.start, goal: t.goal }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanResult {
    /// First optimized plan, `H` normalized chunks.
    pub actions: Vec<Vec<f64>>,
    /// Cost trace of the first plan.
    pub cost_trace: Vec<f64>,
    /// Raw actions sent to the environment.
    pub executed: Vec<Vec<f64>>,
    pub success: bool,
    pub final_distance: f64,
    pub diagnostic: Option<String>,
    /// Optimizer wall time attributed to this task, in seconds.
    pub plan_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpcOutcome {
    pub result: PlanResult,
    /// `curve[i]`: success reached within `i + 1` replanning steps.
    pub curve: Vec<bool>,
    pub steps: usize,
}

/// Executes one normalized chunk as `frameskip` raw actions.
fn execute<E: Environment>(env: &E, state: &E::State, chunk: &[f64], executed: &mut Vec<Vec<f64>>) -> E::State {
    let ad = env.action_dim();
    let lim = env.action_limit();
    let mut s = state.clone();
    for a in chunk.chunks(ad) {
        let raw: Vec<f64> = a.iter().map(|v| v.clamp(-1.0, 1.0) * lim).collect();
        s = env.step(&s, &raw);
        executed.push(raw);
    }
    s
}

fn problems_for<E: Environment, M: LatentDynamics + ?Sized>(model: &M, env: &E, tasks: &[PlanTask<E::State>]) -> Result<Vec<PlanProblem>> {
    if model.chunk_dim() != env.action_dim() * model.frameskip() {
        return Err(Error::dim("plan", format!("model chunk {} vs env action dim {} x frameskip {}", model.chunk_dim(), env.action_dim(), model.frameskip())));
    }
    tasks
        .iter()
        .map(|t| {
            let z0 = model.encode_observation(&env.observe(&t.start))?;
            let zg = model.encode_observation(&env.observe(&t.goal))?;
            Ok(PlanProblem::from_start(model, z0, zg))
        })
        .collect()
}

/// Plans once per task with the terminal cost and executes every planned action.
pub fn run_open_loop_batch<E: Environment, M: LatentDynamics + ?Sized>(
    model: &M,
    env: &E,
    tasks: &[PlanTask<E::State>],
    cfg: &PlanConfig,
) -> Result<Vec<PlanResult>> {
    let problems = problems_for(model, env, tasks)?;
    let refs: Vec<&PlanProblem> = problems.iter().collect();
    let streams: Vec<u64> = tasks.iter().map(|t| t.id as u64).collect();
    let t0 = Instant::now();
    let plans = plan_batch(model, &refs, &streams, cfg, Cost::Terminal)?;
    let per_task = t0.elapsed().as_secs_f64() / tasks.len().max(1) as f64;
    Ok(tasks
        .iter()
        .zip(plans)
        .map(|(task, plan)| {
            let mut executed = Vec::new();
            let mut s = task.start.clone();
            if plan.diagnostic.is_none() {
                for chunk in &plan.actions {
                    s = execute(env, &s, chunk, &mut executed);
                }
            }
            let d = env.goal_distance(&s, &task.goal);
            PlanResult {
                success: plan.diagnostic.is_none() && d <= env.success_radius(),
                final_distance: d,
                actions: plan.actions,
                cost_trace: plan.cost_trace,
                executed,
                diagnostic: plan.diagnostic,
                plan_seconds: per_task,
            }
        })
        .collect())
}

pub fn run_open_loop<E: Environment, M: LatentDynamics + ?Sized>(model: &M, env: &E, task: &PlanTask<E::State>, cfg: &PlanConfig) -> Result<PlanResult> {
    Ok(run_open_loop_batch(model, env, std::slice::from_ref(task), cfg)?.pop().expect("one task"))
}

/// Receding-horizon control: plan with the weighted cost, execute the first
/// chunk, re-encode, slide the history window and replan, until success or
/// `max_steps` chunks. Unfinished tasks advance in lockstep so planning can batch.
pub fn run_mpc_batch<E: Environment, M: LatentDynamics + ?Sized>(
    model: &M,
    env: &E,
    tasks: &[PlanTask<E::State>],
    cfg: &PlanConfig,
    max_steps: usize,
) -> Result<Vec<MpcOutcome>> {
    if max_steps < cfg.horizon {
        return Err(Error::Contract(format!("max_steps {max_steps} must be at least the horizon {}", cfg.horizon)));
    }
    let mut problems = problems_for(model, env, tasks)?;
    let mut states: Vec<E::State> = tasks.iter().map(|t| t.start.clone()).collect();
    let mut outcomes: Vec<MpcOutcome> = tasks
        .iter()
        .map(|t| {
            let d = env.goal_distance(&t.start, &t.goal);
            MpcOutcome {
                result: PlanResult {
                    actions: vec![],
                    cost_trace: vec![],
                    executed: vec![],
                    success: d <= env.success_radius(),
                    final_distance: d,
                    diagnostic: None,
                    plan_seconds: 0.0,
                },
                curve: Vec::with_capacity(max_steps),
                steps: 0,
            }
        })
        .collect();
    for step in 0..max_steps {
        let active: Vec<usize> = (0..tasks.len()).filter(|&i| !outcomes[i].result.success && outcomes[i].result.diagnostic.is_none()).collect();
        if !active.is_empty() {
            let refs: Vec<&PlanProblem> = active.iter().map(|&i| &problems[i]).collect();
            let streams: Vec<u64> = active.iter().map(|&i| ((tasks[i].id as u64) << 16) | step as u64).collect();
            let t0 = Instant::now();
            let plans = plan_batch(model, &refs, &streams, cfg, Cost::Weighted(cfg.gamma))?;
            let share = t0.elapsed().as_secs_f64() / active.len() as f64;
            for (&i, plan) in active.iter().zip(plans) {
                let out = &mut outcomes[i];
                out.result.plan_seconds += share;
                out.steps += 1;
                if step == 0 {
                    out.result.actions = plan.actions.clone();
                    out.result.cost_trace = plan.cost_trace.clone();
                }
                if let Some(why) = plan.diagnostic {
                    out.result.diagnostic = Some(why);
                    continue;
                }
                let chunk = plan.actions[0].clone();
                states[i] = execute(env, &states[i], &chunk, &mut out.result.executed);
                let z = model.encode_observation(&env.observe(&states[i]))?;
                problems[i].advance(z, chunk);
                let d = env.goal_distance(&states[i], &tasks[i].goal);
                out.result.final_distance = d;
                out.result.success = d <= env.success_radius();
            }
        }
        for out in &mut outcomes {
            out.curve.push(out.result.success);
        }
    }
    Ok(outcomes)
}

pub fn run_mpc<E: Environment, M: LatentDynamics + ?Sized>(
    model: &M,
    env: &E,
    task: &PlanTask<E::State>,
    cfg: &PlanConfig,
    max_steps: usize,
) -> Result<MpcOutcome> {
    Ok(run_mpc_batch(model, env, std::slice::from_ref(task), cfg, max_steps)?.pop().expect("one task"))
}

/// `step,success_rate` with the cumulative fraction of solved tasks.
pub fn success_curve_csv(outcomes: &[MpcOutcome]) -> String {
    let steps = outcomes.iter().map(|o| o.curve.len()).max().unwrap_or(0);
    let mut s = String::from("step,success_rate\n");
    for t in 0..steps {
        let hit = outcomes.iter().filter(|o| o.curve.get(t).copied().unwrap_or(o.result.success)).count();
        writeln!(s, "{},{:.6}", t + 1, hit as f64 / outcomes.len().max(1) as f64).expect("string write");
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    OpenLoop,
    Mpc,
}

impl std::fmt::Display for EvalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::OpenLoop => "open",
            Self::Mpc => "mpc",
        })
    }
}

/// One row of the evaluation CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub task_id: usize,
    pub seed: u64,
    pub planner: Optimizer,
    pub mode: EvalMode,
    pub success: bool,
    pub final_distance: f64,
    /// Left empty in the CSV unless timing is requested, so reruns stay byte-identical.
    pub plan_seconds: Option<f64>,
}

pub fn eval_csv_header() -> &'static str {
    "task_id,seed,planner,mode,success,final_distance,plan_wall_time"
}

impl EvalRecord {
    pub fn csv_row(&self) -> String {
        let t = self.plan_seconds.map(|s| format!("{s:.6}")).unwrap_or_default();
        format!("{},{},{},{},{},{:.9e},{}", self.task_id, self.seed, self.planner, self.mode, u8::from(self.success), self.final_distance, t)
    }
}

impl PlanTask<crate::env::EnvState> {
    pub fn from_goal_tasks(tasks: &[GoalTask]) -> Vec<Self> {
        tasks.iter().map(Self::from).collect()
    }
}

/// Default MPC budget in replanning steps: twice the horizon.
pub fn default_mpc_steps(cfg: &PlanConfig) -> usize {
    2 * cfg.horizon
}
