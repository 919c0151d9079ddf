//! Conditioning analysis of gradient-based planning under linear latent
//! dynamics `z' = A z + B a`.
//!
//! With a terminal squared-error cost the planning problem is a convex
//! quadratic whose Hessian is `2 JᵀJ`, `J = [A^{K-1}B … AB B]`. Its nonzero
//! spectrum equals that of the controllability Gramian `W_K = J Jᵀ`, and the
//! condition number of `W_K` is bounded in terms of `κ(B)` and how far `A`
//! is from the identity. This module computes all of those quantities and
//! checks each bound numerically.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{matrix_power, singular_values, spectral_norm, sym_eig, Matrix};

/// Relative slack allowed when checking an inequality that can hold with equality.
pub const BOUND_SLACK: f64 = 1e-9;

/// Default rank cutoff, relative to the largest eigenvalue.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub a: Matrix,
    pub b: Matrix,
    pub horizon: usize,
    pub z0: Vec<f64>,
}

impl LinearSystem {
    pub fn new(a: Matrix, b: Matrix, horizon: usize, z0: Vec<f64>) -> Result<Self> {
        if !a.is_square() || b.rows() != a.rows() || z0.len() != a.rows() {
            return Err(Error::dim(
                "linear_system",
                format!("A {}x{}, B {}x{}, z0 {}", a.rows(), a.cols(), b.rows(), b.cols(), z0.len()),
            ));
        }
        if horizon == 0 {
            return Err(Error::Contract("horizon must be at least 1".into()));
        }
        if !a.is_finite() || !b.is_finite() || z0.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("linear system entries".into()));
        }
        Ok(Self { a, b, horizon, z0 })
    }

    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn action_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn step(&self, z: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let az = self.a.matvec(z)?;
        let bu = self.b.matvec(u)?;
        Ok(az.iter().zip(&bu).map(|(x, y)| x + y).collect())
    }

    /// States `z_0 … z_T` under the given action sequence.
    pub fn simulate(&self, actions: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut states = vec![self.z0.clone()];
        for u in actions {
            let next = self.step(states.last().expect("nonempty"), u)?;
            states.push(next);
        }
        Ok(states)
    }
}

/// `J = [A^{K-1}B  A^{K-2}B  …  B]`, of size `d × K·d_a`.
pub fn rollout_jacobian(sys: &LinearSystem) -> Matrix {
    let k = sys.horizon;
    let blocks: Vec<Matrix> = (0..k).map(|i| &matrix_power(&sys.a, k - 1 - i) * &sys.b).collect();
    Matrix::hcat(&blocks).expect("blocks share the state dimension")
}

/// Finite-horizon controllability Gramian `Σ_{k<K} A^k B Bᵀ (Aᵀ)^k`.
pub fn gramian(sys: &LinearSystem) -> Matrix {
    let d = sys.state_dim();
    let bbt = &sys.b * &sys.b.transpose();
    let mut w = Matrix::zeros(d, d);
    let mut ak = Matrix::identity(d);
    for _ in 0..sys.horizon {
        let term = &(&ak * &bbt) * &ak.transpose();
        w = &w + &term;
        ak = &sys.a * &ak;
    }
    // exact symmetry; the two triangles only differ by rounding
    let mut sym = w.clone();
    for i in 0..d {
        for j in 0..d {
            sym[(i, j)] = 0.5 * (w[(i, j)] + w[(j, i)]);
        }
    }
    sym
}

/// Spectral summary of a PSD matrix restricted to its range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EffectiveCondition {
    pub kappa: f64,
    pub lambda_max: f64,
    pub lambda_min_pos: f64,
    pub rank: usize,
}

/// `λ_max / λ_min⁺`, treating eigenvalues below `rel_tol · λ_max` as zero.
pub fn effective_condition(s: &Matrix, rel_tol: f64) -> Result<EffectiveCondition> {
    let eig = sym_eig(s)?;
    let lambda_max = eig.values[0];
    if lambda_max <= 0.0 {
        return Err(Error::Contract("effective condition of a zero (or negative) matrix".into()));
    }
    let cutoff = rel_tol * lambda_max;
    let min_eig = *eig.values.last().expect("nonempty");
    if min_eig < -1e-8 * lambda_max {
        return Err(Error::Contract(format!("matrix is not PSD (eigenvalue {min_eig:e})")));
    }
    let positive: Vec<f64> = eig.values.iter().copied().filter(|&l| l > cutoff).collect();
    let lambda_min_pos = *positive.last().expect("λ_max passes the cutoff");
    Ok(EffectiveCondition { kappa: lambda_max / lambda_min_pos, lambda_max, lambda_min_pos, rank: positive.len() })
}

/// `κ(M) = σ_max / σ_min` over the `min(rows, cols)` singular values.
pub fn condition_number(m: &Matrix) -> Result<f64> {
    let sv = singular_values(m)?;
    let k = m.rows().min(m.cols());
    let smax = sv[0];
    let smin = sv[k - 1];
    Ok(if smin > 0.0 { smax / smin } else { f64::INFINITY })
}

#[derive(Clone, Debug)]
pub struct ConditioningReport {
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    /// `‖A − I‖₂`
    pub eps: f64,
    pub kappa_a: f64,
    pub kappa_b: f64,
    pub sigma_max_a: f64,
    pub sigma_min_a: f64,
    /// Effective condition number of the planning Hessian `2 JᵀJ`.
    pub kappa_eff: f64,
    /// Condition number of `W_K` over its range.
    pub kappa_gramian: f64,
    pub gramian_rank: usize,
    pub controllable_dim: usize,
    pub b_invertible: bool,
    pub bound_ratio: Option<f64>,
    pub bound_power: Option<f64>,
    pub bound_eps: Option<f64>,
    pub bound_exp: Option<f64>,
    /// `max |W_K − J Jᵀ|`
    pub gramian_jacobian_err: f64,
    /// `|κ_eff(2JᵀJ) − κ(W_K)| / κ(W_K)`
    pub hessian_gramian_rel_err: f64,
    pub weyl_holds: bool,
}

fn within(value: f64, bound: Option<f64>) -> Option<bool> {
    bound.map(|b| value <= b * (1.0 + BOUND_SLACK))
}

impl ConditioningReport {
    pub fn ratio_holds(&self) -> Option<bool> {
        within(self.kappa_eff, self.bound_ratio)
    }

    pub fn power_holds(&self) -> Option<bool> {
        within(self.kappa_eff, self.bound_power)
    }

    pub fn eps_holds(&self) -> Option<bool> {
        within(self.kappa_eff, self.bound_eps)
    }

    pub fn exp_holds(&self) -> Option<bool> {
        within(self.kappa_eff, self.bound_exp)
    }

    /// `κ_eff ≤ ratio ≤ power ≤ eps ≤ exp` over whichever bounds apply.
    pub fn chain_ordered(&self) -> bool {
        let chain: Vec<f64> = [Some(self.kappa_eff), self.bound_ratio, self.bound_power, self.bound_eps, self.bound_exp]
            .into_iter()
            .flatten()
            .collect();
        chain.windows(2).all(|w| w[0] <= w[1] * (1.0 + BOUND_SLACK))
    }

    /// Every applicable bound holds.
    pub fn all_hold(&self) -> bool {
        [self.ratio_holds(), self.power_holds(), self.eps_holds(), self.exp_holds()]
            .into_iter()
            .flatten()
            .all(|h| h)
    }

    pub const CSV_HEADER: &'static str = "d,d_a,K,eps,kappa_a,kappa_b,kappa_eff,kappa_gramian,rank,bound_ratio,bound_power,bound_eps,bound_exp,ratio_holds,power_holds,eps_holds,exp_holds,gram_jac_err,lemma_rel_err";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.12e}"));
        let flag = |v: Option<bool>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        format!(
            "{},{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{},{},{},{},{},{},{},{},{},{:.3e},{:.3e}",
            self.state_dim,
            self.action_dim,
            self.horizon,
            self.eps,
            self.kappa_a,
            self.kappa_b,
            self.kappa_eff,
            self.kappa_gramian,
            self.gramian_rank,
            opt(self.bound_ratio),
            opt(self.bound_power),
            opt(self.bound_eps),
            opt(self.bound_exp),
            flag(self.ratio_holds()),
            flag(self.power_holds()),
            flag(self.eps_holds()),
            flag(self.exp_holds()),
            self.gramian_jacobian_err,
            self.hessian_gramian_rel_err,
        )
    }
}

pub fn analyze(sys: &LinearSystem) -> Result<ConditioningReport> {
    let d = sys.state_dim();
    let da = sys.action_dim();
    let k = sys.horizon;
    let eps = spectral_norm(&(&sys.a - &Matrix::identity(d)))?;
    let sv_a = singular_values(&sys.a)?;
    let (sigma_max_a, sigma_min_a) = (sv_a[0], sv_a[d - 1]);
    let kappa_a = if sigma_min_a > 0.0 { sigma_max_a / sigma_min_a } else { f64::INFINITY };
    let sv_b = singular_values(&sys.b)?;
    let rb = d.min(da);
    let kappa_b = if sv_b[rb - 1] > 0.0 { sv_b[0] / sv_b[rb - 1] } else { f64::INFINITY };
    let b_invertible = da == d && sv_b[d - 1] > 1e-12 * sv_b[0];

    let j = rollout_jacobian(sys);
    let w = gramian(sys);
    let jjt = &j * &j.transpose();
    let gramian_jacobian_err = w.max_abs_diff(&jjt);
    let hessian = (&j.transpose() * &j).scaled(2.0);
    let eff_h = effective_condition(&hessian, RANK_TOL)?;
    let eff_w = effective_condition(&w, RANK_TOL)?;
    let hessian_gramian_rel_err = (eff_h.kappa - eff_w.kappa).abs() / eff_w.kappa;

    let weyl_holds = sigma_max_a <= (1.0 + eps) * (1.0 + BOUND_SLACK) && sigma_min_a >= (1.0 - eps) - BOUND_SLACK;

    let kb2 = kappa_b * kappa_b;
    let km1 = (k - 1) as i32;
    let (bound_ratio, bound_power) = if b_invertible {
        let num: f64 = (0..k).map(|i| sigma_max_a.powi(2 * i as i32)).sum();
        let den: f64 = (0..k).map(|i| sigma_min_a.powi(2 * i as i32)).sum();
        (Some(kb2 * num / den), Some(kb2 * kappa_a.powi(2 * km1)))
    } else {
        (None, None)
    };
    let bound_eps = (b_invertible && eps < 1.0).then(|| kb2 * ((1.0 + eps) / (1.0 - eps)).powi(2 * km1));
    let bound_exp = (b_invertible && eps <= 0.5).then(|| kb2 * (6.0 * eps * k as f64).exp());

    Ok(ConditioningReport {
        state_dim: d,
        action_dim: da,
        horizon: k,
        eps,
        kappa_a,
        kappa_b,
        sigma_max_a,
        sigma_min_a,
        kappa_eff: eff_h.kappa,
        kappa_gramian: eff_w.kappa,
        gramian_rank: eff_w.rank,
        controllable_dim: eff_w.rank,
        b_invertible,
        bound_ratio,
        bound_power,
        bound_eps,
        bound_exp,
        gramian_jacobian_err,
        hessian_gramian_rel_err,
        weyl_holds,
    })
}

#[derive(Clone, Debug)]
pub struct ProxyStep {
    pub t: usize,
    pub cosine: f64,
    /// `‖(A − I) v̂_t‖`
    pub lhs: f64,
    /// `√(2(1 − C_t)) + σ_max(B) Δ_a / c`
    pub rhs: f64,
}

impl ProxyStep {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs + 1e-12
    }

    pub fn gap(&self) -> f64 {
        self.rhs - self.lhs
    }
}

#[derive(Clone, Debug)]
pub struct ProxyReport {
    pub steps: Vec<ProxyStep>,
    /// Whether every velocity had the same norm (to 1e-9 relative).
    pub constant_speed: bool,
    /// The exact common speed, or the smallest speed when speeds vary.
    pub speed: f64,
    pub delta_a: f64,
    pub sigma_max_b: f64,
    pub mean_cosine: f64,
    pub mean_lhs: f64,
    /// `√(2η) + σ_max(B) Δ_a / c` with `η = 1 − mean C`.
    pub averaged_rhs: f64,
    pub note: Option<&'static str>,
}

impl ProxyReport {
    pub fn violations(&self) -> usize {
        self.steps.iter().filter(|s| !s.holds()).count()
    }

    pub fn averaged_holds(&self) -> bool {
        self.mean_lhs <= self.averaged_rhs + 1e-12
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Checks the directional bound linking trajectory cosine similarity to
/// `(A − I)` along the visited velocity directions.
pub fn cosine_proxy_check(sys: &LinearSystem, actions: &[Vec<f64>]) -> Result<ProxyReport> {
    if actions.len() < 2 {
        return Err(Error::Contract("need at least two actions (three states) for a cosine".into()));
    }
    let d = sys.state_dim();
    let states = sys.simulate(actions)?;
    let vel: Vec<Vec<f64>> = states.windows(2).map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect()).collect();
    let speeds: Vec<f64> = vel.iter().map(|v| norm(v)).collect();
    let min_speed = speeds.iter().copied().fold(f64::INFINITY, f64::min);
    let max_speed = speeds.iter().copied().fold(0.0, f64::max);
    if min_speed < crate::grad::COSINE_NORM_FLOOR {
        return Err(Error::DegenerateVelocity { norm: min_speed });
    }
    let constant_speed = (max_speed - min_speed) <= 1e-9 * max_speed;
    let speed = if constant_speed { speeds[0] } else { min_speed };
    let delta_a = actions
        .windows(2)
        .map(|w| norm(&w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect::<Vec<_>>()))
        .fold(0.0, f64::max);
    let sigma_max_b = spectral_norm(&sys.b)?;
    let a_minus_i = &sys.a - &Matrix::identity(d);
    let action_term = sigma_max_b * delta_a / speed;

    let mut steps = Vec::with_capacity(vel.len() - 1);
    for t in 0..vel.len() - 1 {
        let (v0, v1) = (&vel[t], &vel[t + 1]);
        let cosine = v0.iter().zip(v1).map(|(a, b)| a * b).sum::<f64>() / (speeds[t] * speeds[t + 1]);
        let unit: Vec<f64> = v0.iter().map(|x| x / speeds[t]).collect();
        let lhs = norm(&a_minus_i.matvec(&unit)?);
        let rhs = (2.0 * (1.0 - cosine).max(0.0)).sqrt() + action_term;
        steps.push(ProxyStep { t, cosine, lhs, rhs });
    }
    let n = steps.len() as f64;
    let mean_cosine = steps.iter().map(|s| s.cosine).sum::<f64>() / n;
    let mean_lhs = steps.iter().map(|s| s.lhs).sum::<f64>() / n;
    let eta = (1.0 - mean_cosine).max(0.0);
    Ok(ProxyReport {
        steps,
        constant_speed,
        speed,
        delta_a,
        sigma_max_b,
        mean_cosine,
        mean_lhs,
        averaged_rhs: (2.0 * eta).sqrt() + action_term,
        note: (!constant_speed).then_some("speeds vary: minimum speed used in place of the constant speed, bound is heuristic"),
    })
}

/// Actions that hold the latent speed at `‖(A − I) z_0‖` for `steps` steps:
/// each velocity keeps the direction of the free response `(A − I) z_t` and
/// `B u_t` supplies the difference. Needs `B` of full row rank.
pub fn constant_speed_actions(sys: &LinearSystem, steps: usize) -> Result<Vec<Vec<f64>>> {
    let d = sys.state_dim();
    let bt = sys.b.transpose();
    let eig = sym_eig(&(&bt * &sys.b))?;
    let top = eig.values.first().copied().unwrap_or(0.0);
    if sys.action_dim() < d || eig.values.iter().any(|&l| l <= RANK_TOL * top.max(1.0)) {
        return Err(Error::Contract("constant-speed actions need B of full row rank".into()));
    }
    let a_minus_i = &sys.a - &Matrix::identity(d);
    let mut z = sys.z0.clone();
    let mut speed = None;
    let mut actions = Vec::with_capacity(steps);
    for _ in 0..steps {
        let w = a_minus_i.matvec(&z)?;
        let n = norm(&w);
        if n < crate::grad::COSINE_NORM_FLOOR {
            return Err(Error::DegenerateVelocity { norm: n });
        }
        let c = *speed.get_or_insert(n);
        let target: Vec<f64> = w.iter().map(|x| x * c / n).collect();
        let r: Vec<f64> = target.iter().zip(&w).map(|(t, x)| t - x).collect();
        // u = (BᵀB)⁻¹ Bᵀ r through the eigendecomposition
        let btr = bt.matvec(&r)?;
        let mut u = vec![0.0; sys.action_dim()];
        for (i, &l) in eig.values.iter().enumerate() {
            let v = eig.vector(i);
            let coef = v.iter().zip(&btr).map(|(a, b)| a * b).sum::<f64>() / l;
            u.iter_mut().zip(&v).for_each(|(ui, vi)| *ui += coef * vi);
        }
        z = sys.step(&z, &u)?;
        actions.push(u);
    }
    Ok(actions)
}

/// 2-D rotation by `theta`.
pub fn rotation(theta: f64) -> Matrix {
    Matrix::from_rows(&[&[theta.cos(), -theta.sin()], &[theta.sin(), theta.cos()]]).expect("2x2")
}

/// Draw settings for randomized checks of the conditioning bounds.
#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub draws: usize,
    pub state_dim: usize,
    pub eps_values: Vec<f64>,
    pub horizons: Vec<usize>,
    /// Scale of the Gaussian perturbation in `B = I + noise · N`.
    pub b_noise: f64,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { draws: 1000, state_dim: 4, eps_values: vec![0.1, 0.25, 0.4], horizons: vec![2, 5, 10], b_noise: 0.1, seed: 0 }
    }
}

/// `A = I + ε G / ‖G‖₂`, `B = I + noise · N`, with Gaussian `G`, `N` and `z_0`.
pub fn sample_eps_straight(d: usize, eps: f64, horizon: usize, b_noise: f64, rng: &mut ChaCha8Rng) -> Result<LinearSystem> {
    let mut gauss = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect() };
    let g = Matrix::from_vec(d, d, gauss(d * d))?;
    let gn = spectral_norm(&g)?;
    let a = &Matrix::identity(d) + &g.scaled(eps / gn);
    let noise = Matrix::from_vec(d, d, gauss(d * d))?;
    let b = &Matrix::identity(d) + &noise.scaled(b_noise);
    let z0 = gauss(d);
    LinearSystem::new(a, b, horizon, z0)
}

#[derive(Clone, Debug)]
pub struct SweepDraw {
    pub draw: usize,
    pub target_eps: f64,
    pub report: ConditioningReport,
}

impl SweepDraw {
    pub const CSV_HEADER: &'static str = "draw,target_eps,d,d_a,K,eps,kappa_a,kappa_b,kappa_eff,kappa_gramian,rank,bound_ratio,bound_power,bound_eps,bound_exp,ratio_holds,power_holds,eps_holds,exp_holds,gram_jac_err,lemma_rel_err";

    pub fn csv_row(&self) -> String {
        format!("{},{},{}", self.draw, self.target_eps, self.report.csv_row())
    }
}

/// Runs `cfg.draws` independent draws cycling through the ε and horizon grids.
///
/// Draw `i` uses its own ChaCha stream, so results do not depend on how the
/// sweep is partitioned.
pub fn sweep_theorem(cfg: &SweepConfig) -> Result<Vec<SweepDraw>> {
    if cfg.eps_values.is_empty() || cfg.horizons.is_empty() {
        return Err(Error::Config(vec!["sweep needs at least one eps and one horizon".into()]));
    }
    (0..cfg.draws)
        .map(|i| {
            let eps = cfg.eps_values[i % cfg.eps_values.len()];
            let k = cfg.horizons[(i / cfg.eps_values.len()) % cfg.horizons.len()];
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let sys = sample_eps_straight(cfg.state_dim, eps, k, cfg.b_noise, &mut rng)?;
            Ok(SweepDraw { draw: i, target_eps: eps, report: analyze(&sys)? })
        })
        .collect()
}
