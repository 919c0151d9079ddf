//! Gradient and CEM planning against a known linear latent model, then
//! closed-loop MPC in the matching environment.

use straightlab::env::Environment;
use straightlab::linalg::Matrix;
use straightlab::linear::rotation;
use straightlab::plan::{
    plan_cem, plan_gd, run_mpc_batch, run_open_loop_batch, Cost, LatentDynamics, LinearEnv, LinearOracle, Optimizer, PlanConfig, PlanProblem,
    PlanTask,
};

fn main() -> straightlab::Result<()> {
    let a = rotation(0.1).scaled(0.98);
    let env = LinearEnv { oracle: LinearOracle::new(a, Matrix::identity(2))?, limit: 1.0, success_radius: 0.05 };

    let start = vec![1.0, -0.5];
    let mut goal = start.clone();
    for u in [[0.6, 0.2], [0.5, 0.4], [0.2, 0.6], [-0.1, 0.5], [-0.3, 0.3]] {
        goal = env.step(&goal, &u);
    }
    let problem = PlanProblem::from_start(&env.oracle, start.clone(), goal.clone());

    let gd = PlanConfig { gd_lr: 0.05, gd_steps: 300, ..PlanConfig::default() };
    let out = plan_gd(&env.oracle, &problem, &gd, Cost::Terminal)?;
    println!("GD:  terminal cost {:.3e} after {} steps", out.cost, gd.gd_steps);
    let cem = PlanConfig { optimizer: Optimizer::Cem, ..PlanConfig::default() };
    let out = plan_cem(&env.oracle, &problem, &cem, Cost::Terminal, 0)?;
    println!("CEM: terminal cost {:.3e} ({} samples x {} iterations)", out.cost, cem.cem_population, cem.cem_iterations);
    println!("latent dim {}, chunk dim {}", env.oracle.latent_dim(), env.oracle.chunk_dim());

    let tasks = vec![PlanTask { id: 0, start, goal }];
    let open = run_open_loop_batch(&env.oracle, &env, &tasks, &gd)?;
    let mpc = run_mpc_batch(&env.oracle, &env, &tasks, &gd, 5)?;
    println!("open loop: success {} at distance {:.4}", open[0].success, open[0].final_distance);
    println!("MPC:       success {} at distance {:.4} ({} replans)", mpc[0].result.success, mpc[0].result.final_distance, mpc[0].steps);
    Ok(())
}
