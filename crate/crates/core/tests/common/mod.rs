#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use straightlab::grad::{Graph, Tensor, Var};
use straightlab::linalg::Matrix;
use straightlab::model::{ModelConfig, WorldModel};
use straightlab::plan::{plan_cost, plan_cost_grad, Cost, LinearEnv, LinearOracle, PlanProblem, PlanTask};

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

/// `‖a − b‖ / max(‖a‖ + ‖b‖, floor)` over flattened gradients.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (na + nb).max(floor)
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Tanh,
    Relu,
    MulY,
    SubY,
    AddY,
    Scale(f64),
    /// `[h | y]` times a fresh weight back to the working width
    ConcatProject,
    /// columns `1..` of `[h | y]`, then the same projection
    SliceProject,
}

#[derive(Clone, Copy, Debug)]
enum Head {
    Sum,
    Mean,
    Mse,
    MseRows,
    L2,
    Cosine,
    RowCosine,
}

/// A random differentiable program over three parameters `X [r, c]`,
/// `W [c, k]`, `b [1, k]`, a constant `Y [r, k]` and extra projection weights.
#[derive(Clone, Debug)]
pub struct RandomGraph {
    pub params: Vec<Tensor>,
    y: Tensor,
    ops: Vec<Op>,
    head: Head,
}

impl RandomGraph {
    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = rng.random_range(1..=4);
        let c = rng.random_range(1..=5);
        let k = rng.random_range(2..=5);
        let t = |rng: &mut ChaCha8Rng, rows: usize, cols: usize, s: f64| {
            Tensor::matrix(rows, cols, gaussian(rng, rows * cols).into_iter().map(|v| v * s).collect()).unwrap()
        };
        let mut params = vec![t(&mut rng, r, c, 1.0), t(&mut rng, c, k, 0.7), t(&mut rng, 1, k, 0.3)];
        let y = t(&mut rng, r, k, 1.0);
        let n_ops = rng.random_range(1..=6);
        let mut ops = Vec::with_capacity(n_ops);
        for _ in 0..n_ops {
            let op = match rng.random_range(0..8) {
                0 => Op::Tanh,
                1 => Op::Relu,
                2 => Op::MulY,
                3 => Op::SubY,
                4 => Op::AddY,
                5 => Op::Scale(rng.random_range(-2.0..2.0)),
                6 => {
                    params.push(t(&mut rng, 2 * k, k, 0.5));
                    Op::ConcatProject
                }
                _ => {
                    params.push(t(&mut rng, 2 * k - 1, k, 0.5));
                    Op::SliceProject
                }
            };
            ops.push(op);
        }
        let head = [Head::Sum, Head::Mean, Head::Mse, Head::MseRows, Head::L2, Head::Cosine, Head::RowCosine][rng.random_range(0..7)];
        Self { params, y, ops, head }
    }

    /// Root node and the distance to the nearest non-differentiable point:
    /// the smallest `|input|` of any ReLU and, for norm-based heads, the
    /// smallest row norm. Near such a point the head is skipped and `h` returned.
    fn build(&self, g: &mut Graph, vars: &[Var]) -> (Var, f64) {
        let y = g.constant(self.y.clone());
        let h = g.matmul(vars[0], vars[1]).unwrap();
        let mut h = g.add_bias(h, vars[2]).unwrap();
        let mut extra = vars[3..].iter();
        let mut kink = f64::INFINITY;
        for op in &self.ops {
            h = match *op {
                Op::Tanh => g.tanh(h),
                Op::Relu => {
                    kink = g.value(h).data().iter().fold(kink, |m, v| m.min(v.abs()));
                    g.relu(h)
                }
                Op::MulY => g.mul(h, y),
                Op::SubY => g.sub(h, y),
                Op::AddY => g.add(h, y),
                Op::Scale(s) => g.scale(h, s),
                Op::ConcatProject => {
                    let cat = g.concat(&[h, y]).unwrap();
                    g.matmul(cat, *extra.next().unwrap())
                }
                Op::SliceProject => {
                    let cat = g.concat(&[h, y]).unwrap();
                    let width = g.value(cat).cols();
                    let s = g.slice(cat, 1, width).unwrap();
                    g.matmul(s, *extra.next().unwrap())
                }
            }
            .unwrap();
        }
        if matches!(self.head, Head::L2 | Head::Cosine | Head::RowCosine) {
            let v = g.value(h);
            let norm = (0..v.rows()).map(|r| v.row_slice(r).iter().map(|x| x * x).sum::<f64>().sqrt());
            kink = norm.fold(kink, f64::min);
            if kink < 1e-3 {
                return (h, kink);
            }
        }
        let root = match self.head {
            Head::Sum => g.sum(h),
            Head::Mean => g.mean(h),
            Head::Mse => g.mse(h, y),
            Head::MseRows => {
                let rows = g.mse_rows(h, y).unwrap();
                g.sum(rows)
            }
            Head::L2 => g.l2norm(h),
            Head::Cosine => g.cosine(h, y),
            Head::RowCosine => {
                let rows = g.row_cosine(h, y).unwrap();
                g.mean(rows)
            }
        }
        .unwrap();
        (root, kink)
    }

    pub fn value(&self, params: &[Tensor]) -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
        let (root, _) = self.build(&mut g, &vars);
        g.value(root).data()[0]
    }

    /// Relative error between the tape gradient and central differences.
    /// `None` when a ReLU input sits close enough to zero for the finite
    /// difference to straddle the kink.
    pub fn fd_check(&self, h: f64) -> Option<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self.params.iter().map(|p| g.param(p.clone())).collect();
        let (root, kink) = self.build(&mut g, &vars);
        if kink < 1e-3 {
            return None;
        }
        let grads = g.backward(root).unwrap();
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        for (i, p) in self.params.iter().enumerate() {
            analytic.extend_from_slice(grads.get_or_zeros(vars[i], p).data());
            for j in 0..p.len() {
                let mut plus = self.params.clone();
                plus[i].data_mut()[j] += h;
                let mut minus = self.params.clone();
                minus[i].data_mut()[j] -= h;
                numeric.push((self.value(&plus) - self.value(&minus)) / (2.0 * h));
            }
        }
        Some(rel_err(&analytic, &numeric, 1e-8))
    }
}

/// Small image world model for gradient checks.
pub fn small_model(seed: u64) -> WorldModel {
    let cfg = ModelConfig { patch_embed: 8, encoder_hidden: 16, d_v: 4, d_a: 6, action_hidden: 12, predictor_hidden: 24, pool_hidden: 8, d_h: 6, ..ModelConfig::default() };
    WorldModel::new(cfg, seed).unwrap()
}

/// Relative error of the planning-cost gradient through an `horizon`-step
/// rollout of `model`, against central differences.
pub fn planning_fd_check(model: &WorldModel, seed: u64, horizon: usize, cost: Cost) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = model.latent_dim();
    let c = model.config().chunk_dim();
    let k = model.config().history;
    let problem = PlanProblem {
        latents: (0..k).map(|_| gaussian(&mut rng, d).into_iter().map(|v| 0.3 * v).collect()).collect(),
        past: (0..k - 1).map(|_| gaussian(&mut rng, c).into_iter().map(|v| 0.5 * v).collect()).collect(),
        goal: gaussian(&mut rng, d).into_iter().map(|v| 0.3 * v).collect(),
    };
    let actions: Vec<Vec<f64>> = (0..horizon).map(|_| gaussian(&mut rng, c).into_iter().map(|v| 0.5 * v).collect()).collect();
    let (_, grad) = plan_cost_grad(model, &problem, &actions, horizon, cost).unwrap();
    let h = 1e-5;
    let mut numeric = Vec::new();
    for t in 0..horizon {
        for j in 0..c {
            let mut plus = actions.clone();
            plus[t][j] += h;
            let mut minus = actions.clone();
            minus[t][j] -= h;
            let fp = plan_cost(model, &problem, &plus, horizon, cost).unwrap();
            let fm = plan_cost(model, &problem, &minus, horizon, cost).unwrap();
            numeric.push((fp - fm) / (2.0 * h));
        }
    }
    rel_err(&grad.concat(), &numeric, 1e-10)
}

/// `A = I + εG/‖G‖₂` with `ε = 0.1`, `B = I`, and tasks whose goals are
/// reached by random in-bound actions over `horizon` steps.
pub fn oracle_setup(d: usize, horizon: usize, n: usize, seed: u64) -> (LinearEnv, Vec<PlanTask<Vec<f64>>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Matrix::from_vec(d, d, gaussian(&mut rng, d * d)).unwrap();
    let s = straightlab::linalg::spectral_norm(&g).unwrap();
    let a = &Matrix::identity(d) + &g.scaled(0.1 / s);
    let env = LinearEnv { oracle: LinearOracle::new(a, Matrix::identity(d)).unwrap(), limit: 1.0, success_radius: 0.05 };
    let tasks = (0..n)
        .map(|id| {
            let start = gaussian(&mut rng, d);
            let mut goal = start.clone();
            for _ in 0..horizon {
                let u: Vec<f64> = (0..d).map(|_| rng.random_range(-0.8..0.8)).collect();
                goal = straightlab::env::Environment::step(&env, &goal, &u);
            }
            PlanTask { id, start, goal }
        })
        .collect();
    (env, tasks)
}
