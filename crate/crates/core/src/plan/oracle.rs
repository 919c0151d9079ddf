use super::LatentDynamics;
use crate::env::{Environment, Observation};
use crate::error::{Error, Result};
use crate::grad::{Graph, Tensor, Var};
use crate::linalg::Matrix;

/// Known linear dynamics `z' = A z + B a` behind an identity encoder on
/// state observations. Planning on it is a convex quadratic problem.
#[derive(Clone, Debug)]
pub struct LinearOracle {
    a: Matrix,
    b: Matrix,
}

impl LinearOracle {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        if !a.is_square() || b.rows() != a.rows() {
            return Err(Error::dim("LinearOracle", format!("A {}x{}, B {}x{}", a.rows(), a.cols(), b.rows(), b.cols())));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    fn transposed(m: &Matrix) -> Tensor {
        let t = m.transpose();
        Tensor::matrix(t.rows(), t.cols(), t.data().to_vec()).expect("shape")
    }
}

impl LatentDynamics for LinearOracle {
    fn history(&self) -> usize {
        1
    }

    fn chunk_dim(&self) -> usize {
        self.b.cols()
    }

    fn frameskip(&self) -> usize {
        1
    }

    fn latent_dim(&self) -> usize {
        self.a.rows()
    }

    fn encode_observation(&self, obs: &Observation) -> Result<Vec<f64>> {
        match obs {
            Observation::State(v) if v.len() == self.latent_dim() => Ok(v.clone()),
            other => Err(Error::dim("LinearOracle::encode", format!("state of length {}, expected {}", other.len(), self.latent_dim()))),
        }
    }

    fn rollout_on(&self, g: &mut Graph, zs: &[Var], _past: &[Var], future: &[Var]) -> Result<Vec<Var>> {
        let at = g.constant(Self::transposed(&self.a));
        let bt = g.constant(Self::transposed(&self.b));
        let mut z = *zs.last().ok_or_else(|| Error::Contract("rollout needs one latent".into()))?;
        let mut out = Vec::with_capacity(future.len());
        for &u in future {
            let drift = g.matmul(z, at)?;
            let push = g.matmul(u, bt)?;
            z = g.add(drift, push)?;
            out.push(z);
        }
        Ok(out)
    }
}

/// Environment whose true dynamics are the oracle's, with actions bounded by `limit`.
#[derive(Clone, Debug)]
pub struct LinearEnv {
    pub oracle: LinearOracle,
    pub limit: f64,
    pub success_radius: f64,
}

impl Environment for LinearEnv {
    type State = Vec<f64>;

    fn action_dim(&self) -> usize {
        self.oracle.b.cols()
    }

    fn action_limit(&self) -> f64 {
        self.limit
    }

    fn step(&self, state: &Vec<f64>, action: &[f64]) -> Vec<f64> {
        let u: Vec<f64> = action.iter().map(|a| a.clamp(-self.limit, self.limit)).collect();
        let drift = self.oracle.a.matvec(state).expect("state dim");
        let push = self.oracle.b.matvec(&u).expect("action dim");
        drift.iter().zip(push).map(|(x, y)| x + y).collect()
    }

    fn observe(&self, state: &Vec<f64>) -> Observation {
        Observation::State(state.clone())
    }

    fn goal_distance(&self, state: &Vec<f64>, goal: &Vec<f64>) -> f64 {
        state.iter().zip(goal).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    fn success_radius(&self) -> f64 {
        self.success_radius
    }
}
