//! Joint training of encoder, action encoder, predictor and pooling head on
//! `L = L_pred + λ·(1 − C)`, with prediction targets behind a stop-gradient.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{Dataset, Environment, NavEnv, Observation};
use crate::error::{Error, Result};
use crate::grad::{AdamState, Graph, Tensor, Var};
use crate::model::{CosineVariant, ParamGroup, WorldModel};

pub const COLLAPSE_VARIANCE_FLOOR: f64 = 1e-6;
pub const MIN_COLLAPSE_PROBES: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub batch_size: usize,
    /// Encoder and pooling-head learning rate; `None` picks 3e-4 when
    /// `lambda > 0` and 3e-5 otherwise.
    pub lr_encoder: Option<f64>,
    /// Predictor and action-encoder learning rate.
    pub lr_predictor: f64,
    pub epochs: usize,
    pub variant: CosineVariant,
    pub seed: u64,
    /// Windows drawn at random from each training trajectory per epoch;
    /// `None` visits every valid window once.
    pub windows_per_traj: Option<usize>,
    pub heldout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            batch_size: 32,
            lr_encoder: None,
            lr_predictor: 5e-4,
            epochs: 20,
            variant: CosineVariant::Agg,
            seed: 0,
            windows_per_traj: Some(1),
            heldout_fraction: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn encoder_lr(&self) -> f64 {
        self.lr_encoder.unwrap_or(if self.lambda > 0.0 { 3e-4 } else { 3e-5 })
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            bad.push(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.encoder_lr() > 0.0) {
            bad.push("lr_encoder must be > 0".into());
        }
        if !(self.lr_predictor > 0.0) {
            bad.push("lr_predictor must be > 0".into());
        }
        if self.batch_size == 0 {
            bad.push("batch_size must be >= 1".into());
        }
        if self.windows_per_traj == Some(0) {
            bad.push("windows_per_traj must be >= 1".into());
        }
        if !(self.heldout_fraction > 0.0 && self.heldout_fraction < 1.0) {
            bad.push(format!("heldout_fraction must be in (0, 1), got {}", self.heldout_fraction));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

/// Held-out statistics of an encoder.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalStats {
    /// Mean straightening cosine under the training variant.
    pub cosine: f64,
    /// Mean straightening cosine of the raw flattened latents.
    pub cosine_flatten: f64,
    /// Mean per-dimension latent variance.
    pub variance: f64,
    pub triplets: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub l_pred: f64,
    pub l_curv: f64,
    pub heldout: EvalStats,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Held-out statistics before the first update.
    pub initial: EvalStats,
    pub epochs: Vec<EpochStats>,
    pub steps: usize,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str = "epoch,l_pred,l_curv,cosine,variance,cosine_flatten";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for e in &self.epochs {
            let h = &e.heldout;
            writeln!(s, "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}", e.epoch, e.l_pred, e.l_curv, h.cosine, h.variance, h.cosine_flatten).expect("string write");
        }
        s
    }

    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

/// Prediction loss: mean squared error against a stop-gradient target.
pub fn prediction_loss(g: &mut Graph, predicted: Var, target: Var) -> Result<Var> {
    let t = g.stop_gradient(target);
    g.mse(predicted, t)
}

/// Curvature loss `1 − C` for a scalar cosine node.
pub fn curvature_loss(g: &mut Graph, cosine: Var) -> Result<Var> {
    let neg = g.scale(cosine, -1.0)?;
    let shape = g.value(neg).shape().to_vec();
    let one = g.constant(Tensor::filled(&shape, 1.0));
    g.add(one, neg)
}

/// One training sample: `K + 1` consecutive model-level frames. Slots before
/// the trajectory start repeat frame 0 with zero actions, which matches an
/// agent at rest (every trajectory starts at rest).
#[derive(Clone, Copy, Debug)]
struct Window {
    traj: usize,
    start: isize,
}

pub fn train(model: &mut WorldModel, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let mc = model.config().clone();
    if data.env.frameskip != mc.frameskip {
        return Err(Error::Contract(format!("dataset frameskip {} != model frameskip {}", data.env.frameskip, mc.frameskip)));
    }
    let k = mc.history;
    let frames = data.traj_len() / mc.frameskip + 1;
    if frames < k + 1 {
        return Err(Error::Contract(format!("trajectories give {frames} frames, need at least {}", k + 1)));
    }
    let (train_range, held_range) = data.split(cfg.heldout_fraction);
    let lrs = (0..model.params().len())
        .map(|i| match WorldModel::param_group(i) {
            ParamGroup::Encoder => cfg.encoder_lr(),
            ParamGroup::Predictor => cfg.lr_predictor,
        })
        .collect();
    let mut adam = AdamState::with_lrs(model.params(), lrs);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let held: Vec<usize> = held_range.collect();
    let mut report = TrainReport { initial: evaluate(model, data, &held, cfg.variant)?, ..TrainReport::default() };
    let starts = -(k as i64 - 1)..=(frames - k - 1) as i64;
    let mut batcher = Batcher::new(model, data);
    for epoch in 1..=cfg.epochs {
        let mut windows = Vec::new();
        for traj in train_range.clone() {
            match cfg.windows_per_traj {
                None => windows.extend(starts.clone().map(|start| Window { traj, start: start as isize })),
                Some(n) => {
                    for _ in 0..n {
                        windows.push(Window { traj, start: rng.random_range(starts.clone()) as isize });
                    }
                }
            }
        }
        windows.shuffle(&mut rng);
        let (mut sum_pred, mut sum_curv, mut n_curv, mut batches) = (0.0, 0.0, 0usize, 0usize);
        for batch in windows.chunks(cfg.batch_size) {
            let step = batcher.step(model, batch, cfg)
                .map_err(|e| match e {
                    Error::NonFinite(what) => Error::NonFinite(format!("{what} (epoch {epoch}, step {})", report.steps)),
                    other => other,
                })?;
            adam.step(model.params_mut(), &step.grads)?;
            report.steps += 1;
            batches += 1;
            sum_pred += step.l_pred;
            if let Some(c) = step.l_curv {
                sum_curv += c;
                n_curv += 1;
            }
        }
        report.epochs.push(EpochStats {
            epoch,
            l_pred: sum_pred / batches.max(1) as f64,
            l_curv: if n_curv > 0 { sum_curv / n_curv as f64 } else { f64::NAN },
            heldout: evaluate(model, data, &held, cfg.variant)?,
        });
    }
    Ok(report)
}

struct StepOutput {
    grads: Vec<Tensor>,
    l_pred: f64,
    l_curv: Option<f64>,
}

struct Batcher<'a> {
    data: &'a Dataset,
    frameskip: usize,
    history: usize,
    limit: f64,
}

impl<'a> Batcher<'a> {
    fn new(model: &WorldModel, data: &'a Dataset) -> Self {
        Self { data, frameskip: model.config().frameskip, history: model.config().history, limit: data.env.action_limit() }
    }

    fn step(&mut self, model: &WorldModel, batch: &[Window], cfg: &TrainConfig) -> Result<StepOutput> {
        let (k, f) = (self.history, self.frameskip);
        // unique frames in first-seen order
        let mut index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut frames: Vec<(usize, usize)> = Vec::new();
        let mut slot = |traj: usize, t: usize| {
            *index.entry((traj, t)).or_insert_with(|| {
                frames.push((traj, t));
                frames.len() - 1
            })
        };
        let mut rows = vec![Vec::with_capacity(batch.len()); k + 1];
        let mut chunks = vec![Vec::with_capacity(batch.len() * f * 2); k];
        let mut triplets: [Vec<usize>; 3] = Default::default();
        for w in batch {
            let traj = &self.data.trajectories[w.traj];
            for (j, r) in rows.iter_mut().enumerate() {
                let t = (w.start + j as isize).max(0) as usize;
                r.push(slot(w.traj, t));
            }
            for (j, c) in chunks.iter_mut().enumerate() {
                let t = w.start + j as isize;
                if t < 0 {
                    c.extend(std::iter::repeat_n(0.0, f * 2));
                } else {
                    c.extend(traj.action_chunk(t as usize, f).iter().map(|a| a / self.limit));
                }
            }
            for j in 0..k - 1 {
                let t = w.start + j as isize;
                if t < 0 {
                    continue;
                }
                let t = t as usize;
                let s = &traj.states;
                let (p0, p1, p2) = (s[t * f].position, s[(t + 1) * f].position, s[(t + 2) * f].position);
                if p0 == p1 || p1 == p2 {
                    continue;
                }
                triplets[0].push(slot(w.traj, t));
                triplets[1].push(slot(w.traj, t + 1));
                triplets[2].push(slot(w.traj, t + 2));
            }
        }
        let env = &self.data.env;
        let obs: Vec<Observation> = frames.iter().map(|&(traj, t)| env.observe_state(&self.data.trajectories[traj].states[t * f])).collect();
        let views: Vec<&[f64]> = obs.iter().map(Observation::as_slice).collect();

        let mut g = Graph::new();
        let mut b = model.bind(&mut g, true);
        let x = g.constant(model.input_tensor(&views)?);
        let z = model.encode_graph(&mut g, &b, x, views.len())?;
        let mut hist = Vec::with_capacity(k);
        for r in &rows[..k] {
            hist.push(g.gather_rows(z, r)?);
        }
        let acts = chunks
            .into_iter()
            .map(|c| Tensor::matrix(batch.len(), f * 2, c).map(|t| g.constant(t)))
            .collect::<Result<Vec<_>>>()?;
        let pred = model.predict_graph(&mut g, &b, &hist, &acts)?;
        let target = g.gather_rows(z, &rows[k])?;
        let l_pred = prediction_loss(&mut g, pred, target)?;
        let mut total = l_pred;
        let mut l_curv_value = None;
        if !triplets[0].is_empty() {
            let z0 = g.gather_rows(z, &triplets[0])?;
            let z1 = g.gather_rows(z, &triplets[1])?;
            let z2 = g.gather_rows(z, &triplets[2])?;
            let cos = model.cosine_graph(&mut g, &mut b, z0, z1, z2, cfg.variant)?;
            let mean = g.mean(cos)?;
            let l_curv = curvature_loss(&mut g, mean)?;
            l_curv_value = Some(g.value(l_curv).data()[0]);
            if cfg.lambda > 0.0 {
                let weighted = g.scale(l_curv, cfg.lambda)?;
                total = g.add(l_pred, weighted)?;
            }
        }
        let grads = g.backward(total)?;
        let grads = b.vars().iter().zip(model.params()).map(|(&v, p)| grads.get_or_zeros(v, p)).collect();
        Ok(StepOutput { grads, l_pred: g.value(l_pred).data()[0], l_curv: l_curv_value })
    }
}

/// Held-out cosine and variance over every frame of the given trajectories.
/// Triplets whose agent positions repeat are skipped.
pub fn evaluate(model: &WorldModel, data: &Dataset, trajs: &[usize], variant: CosineVariant) -> Result<EvalStats> {
    let f = model.config().frameskip;
    let frames = data.traj_len() / f + 1;
    let env = &data.env;
    let mut stats = EvalStats::default();
    let mut all = Vec::new();
    let (mut sum, mut sum_flat) = (0.0, 0.0);
    for &i in trajs {
        let traj = &data.trajectories[i];
        let obs: Vec<Observation> = (0..frames).map(|t| env.observe_state(&traj.states[t * f])).collect();
        let views: Vec<&[f64]> = obs.iter().map(Observation::as_slice).collect();
        let z = model.encode_batch(&views)?;
        let mut idx: [Vec<usize>; 3] = Default::default();
        for t in 0..frames.saturating_sub(2) {
            let s = &traj.states;
            if s[t * f].position == s[(t + 1) * f].position || s[(t + 1) * f].position == s[(t + 2) * f].position {
                continue;
            }
            for (j, v) in idx.iter_mut().enumerate() {
                v.push(t + j);
            }
        }
        if !idx[0].is_empty() {
            let (c, cf) = cosines(model, &z, &idx, variant)?;
            sum += c.iter().sum::<f64>();
            sum_flat += cf.iter().sum::<f64>();
            stats.triplets += c.len();
        }
        all.push(z);
    }
    let n = stats.triplets.max(1) as f64;
    stats.cosine = sum / n;
    stats.cosine_flatten = sum_flat / n;
    stats.variance = mean_variance(&all);
    Ok(stats)
}

fn cosines(model: &WorldModel, z: &Tensor, idx: &[Vec<usize>; 3], variant: CosineVariant) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut g = Graph::new();
    let mut b = model.bind(&mut g, false);
    let zv = g.constant(z.clone());
    let z0 = g.gather_rows(zv, &idx[0])?;
    let z1 = g.gather_rows(zv, &idx[1])?;
    let z2 = g.gather_rows(zv, &idx[2])?;
    let c = model.cosine_graph(&mut g, &mut b, z0, z1, z2, variant)?;
    let cf = model.cosine_graph(&mut g, &mut b, z0, z1, z2, CosineVariant::Flatten)?;
    Ok((g.value(c).data().to_vec(), g.value(cf).data().to_vec()))
}

fn mean_variance(blocks: &[Tensor]) -> f64 {
    let Some(first) = blocks.first() else { return 0.0 };
    let d = first.cols();
    let n: usize = blocks.iter().map(Tensor::rows).sum();
    if n < 2 {
        return 0.0;
    }
    let mut mean = vec![0.0; d];
    for b in blocks {
        for r in 0..b.rows() {
            for (m, v) in mean.iter_mut().zip(b.row_slice(r)) {
                *m += v / n as f64;
            }
        }
    }
    let mut var = vec![0.0; d];
    for b in blocks {
        for r in 0..b.rows() {
            for ((acc, v), m) in var.iter_mut().zip(b.row_slice(r)).zip(&mean) {
                *acc += (v - m) * (v - m) / (n - 1) as f64;
            }
        }
    }
    var.iter().sum::<f64>() / d as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollapseReport {
    pub per_dim_variance: Vec<f64>,
    pub mean_variance: f64,
    pub passed: bool,
}

/// Fails when the mean per-dimension latent variance over the probes drops
/// below [`COLLAPSE_VARIANCE_FLOOR`].
pub fn collapse_check(model: &WorldModel, probes: &[Observation]) -> Result<CollapseReport> {
    if probes.len() < MIN_COLLAPSE_PROBES {
        return Err(Error::Contract(format!("collapse check needs at least {MIN_COLLAPSE_PROBES} probes, got {}", probes.len())));
    }
    let views: Vec<&[f64]> = probes.iter().map(Observation::as_slice).collect();
    let z = model.encode_batch(&views)?;
    Ok(collapse_from_latents(&z))
}

pub(crate) fn collapse_from_latents(z: &Tensor) -> CollapseReport {
    let (n, d) = (z.rows(), z.cols());
    let mut per_dim = vec![0.0; d];
    for (c, v) in per_dim.iter_mut().enumerate() {
        let mean = (0..n).map(|r| z.row_slice(r)[c]).sum::<f64>() / n as f64;
        *v = (0..n).map(|r| (z.row_slice(r)[c] - mean).powi(2)).sum::<f64>() / (n - 1).max(1) as f64;
    }
    let mean_variance = per_dim.iter().sum::<f64>() / d as f64;
    CollapseReport { per_dim_variance: per_dim, mean_variance, passed: mean_variance >= COLLAPSE_VARIANCE_FLOOR }
}

/// Renders of `n` distinct uniformly drawn states.
pub fn probe_observations(env: &NavEnv, n: usize, seed: u64) -> Vec<Observation> {
    let mut rng = NavEnv::rng(seed, u64::MAX);
    (0..n).map(|_| env.observe_state(&env.sample_start(&mut rng))).collect()
}
