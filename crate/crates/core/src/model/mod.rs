//! Joint-embedding world model: observation encoder, action encoder,
//! fixed-history predictor and pooling head.
//!
//! The encoder cuts a `C × S × S` image into `P × P` patches, embeds each
//! patch with one shared linear map plus a per-position bias, and mixes the
//! embeddings with a two-layer `tanh` MLP. Its output is either `m_v = (S/P)²`
//! tokens of width `d_v` (spatial mode) or one `d_v` vector (global mode);
//! either way it is stored flat, `m_v · d_v` wide.
//!
//! The predictor sees the last `K` latents and the `K` encoded action chunks
//! and adds its MLP output to the most recent latent.

mod checkpoint;
mod config;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{CosineVariant, LatentMode, ModelConfig};

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::grad::{Graph, Tensor, Var};

/// Latent for one observation: `m_v` tokens of width `d_v`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    pub m_v: usize,
    pub d_v: usize,
    pub data: Vec<f64>,
}

impl LatentState {
    pub fn token(&self, i: usize) -> &[f64] {
        &self.data[i * self.d_v..(i + 1) * self.d_v]
    }

    pub fn sq_distance(&self, other: &LatentState) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    pub fn mse(&self, other: &LatentState) -> f64 {
        self.sq_distance(other) / self.data.len() as f64
    }
}

/// Which optimizer group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    /// Observation encoder and pooling head.
    Encoder,
    /// Action encoder and predictor.
    Predictor,
}

// Parameter slots, in storage order.
const PATCH_W: usize = 0;
const PATCH_POS: usize = 1;
const ENC_W1: usize = 2;
const ENC_B1: usize = 3;
const ENC_W2: usize = 4;
const ENC_B2: usize = 5;
const POOL_W1: usize = 6;
const POOL_W2: usize = 7;
const ACT_W1: usize = 8;
const ACT_B1: usize = 9;
const ACT_W2: usize = 10;
const ACT_B2: usize = 11;
const PRED_W1: usize = 12;
const PRED_B1: usize = 13;
const PRED_W2: usize = 14;
const PRED_B2: usize = 15;

pub const PARAM_NAMES: [&str; 16] = [
    "encoder.patch_w",
    "encoder.patch_pos",
    "encoder.w1",
    "encoder.b1",
    "encoder.w2",
    "encoder.b2",
    "pool.w1",
    "pool.w2",
    "action.w1",
    "action.b1",
    "action.w2",
    "action.b2",
    "predictor.w1",
    "predictor.b1",
    "predictor.w2",
    "predictor.b2",
];

#[derive(Clone, Debug, PartialEq)]
pub struct WorldModel {
    config: ModelConfig,
    params: Vec<Tensor>,
}

/// Model parameters recorded on a graph.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
    avg: Option<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl WorldModel {
    /// Glorot-uniform weights, zero biases. The predictor's output layer
    /// starts small so the initial dynamics stay close to `z' = z`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = param_shapes(&config)
            .into_iter()
            .enumerate()
            .map(|(i, shape)| {
                if shape.len() == 1 {
                    Tensor::zeros(&shape)
                } else {
                    let scale = if i == PRED_W2 { 0.1 } else { 1.0 };
                    glorot(&shape, scale, &mut rng)
                }
            })
            .collect();
        Ok(Self { config, params })
    }

    pub fn from_params(config: ModelConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = param_shapes(&config);
        if params.len() != shapes.len() {
            return Err(Error::dim("WorldModel::from_params", format!("{} tensors, expected {}", params.len(), shapes.len())));
        }
        for (i, (p, s)) in params.iter().zip(&shapes).enumerate() {
            if p.shape() != s.as_slice() {
                return Err(Error::dim("WorldModel::from_params", format!("{}: {:?} vs {:?}", PARAM_NAMES[i], p.shape(), s)));
            }
            if !p.all_finite() {
                return Err(Error::NonFinite(PARAM_NAMES[i].to_string()));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_group(index: usize) -> ParamGroup {
        if index < ACT_W1 {
            ParamGroup::Encoder
        } else {
            ParamGroup::Predictor
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim()
    }

    /// Records every parameter on `g`, trainable or frozen.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self.params.iter().map(|p| if trainable { g.param(p.clone()) } else { g.constant(p.clone()) }).collect();
        Bound { vars, avg: None }
    }

    /// Flat observations (`C·S·S` images or state vectors) arranged as encoder input.
    pub fn input_tensor(&self, obs: &[&[f64]]) -> Result<Tensor> {
        let c = &self.config;
        let want = c.observation_len();
        if let Some(bad) = obs.iter().find(|o| o.len() != want) {
            return Err(Error::dim("encode", format!("observation of length {}, expected {want}", bad.len())));
        }
        if c.state_input > 0 {
            return Tensor::matrix(obs.len(), want, obs.concat());
        }
        let (s, p, ch) = (c.image_size, c.patch, c.channels);
        let per_side = s / p;
        let patch_len = ch * p * p;
        let mut data = Vec::with_capacity(obs.len() * want);
        for o in obs {
            for pi in 0..per_side {
                for pj in 0..per_side {
                    for k in 0..ch {
                        for dy in 0..p {
                            let row = k * s * s + (pi * p + dy) * s + pj * p;
                            data.extend_from_slice(&o[row..row + p]);
                        }
                    }
                }
            }
        }
        Tensor::matrix(obs.len() * per_side * per_side, patch_len, data)
    }

    /// Encoder on a graph: input from [`Self::input_tensor`], output `[B, m_v·d_v]`.
    pub fn encode_graph(&self, g: &mut Graph, b: &Bound, x: Var, batch: usize) -> Result<Var> {
        let c = &self.config;
        let e = g.matmul(x, b.vars[PATCH_W])?;
        let e = g.reshape(e, &[batch, c.token_width()])?;
        let e = g.add_bias(e, b.vars[PATCH_POS])?;
        let e = g.tanh(e)?;
        let h = dense(g, e, b.vars[ENC_W1], Some(b.vars[ENC_B1]))?;
        let h = g.tanh(h)?;
        let z = dense(g, h, b.vars[ENC_W2], Some(b.vars[ENC_B2]))?;
        g.tanh(z)
    }

    /// Action encoder on normalized chunks `[B, f·action_dim]`.
    pub fn action_graph(&self, g: &mut Graph, b: &Bound, a: Var) -> Result<Var> {
        let h = dense(g, a, b.vars[ACT_W1], Some(b.vars[ACT_B1]))?;
        let h = g.tanh(h)?;
        dense(g, h, b.vars[ACT_W2], Some(b.vars[ACT_B2]))
    }

    /// One-step prediction from `K` latents and `K` encoded action chunks, oldest first.
    pub fn predict_encoded(&self, g: &mut Graph, b: &Bound, zs: &[Var], encoded: &[Var]) -> Result<Var> {
        let k = self.config.history;
        if zs.len() != k || encoded.len() != k {
            return Err(Error::Contract(format!("predictor needs {k} latents and {k} actions, got {} and {}", zs.len(), encoded.len())));
        }
        let mut parts = zs.to_vec();
        parts.extend_from_slice(encoded);
        let x = g.concat(&parts)?;
        let h = dense(g, x, b.vars[PRED_W1], Some(b.vars[PRED_B1]))?;
        let h = g.tanh(h)?;
        let d = dense(g, h, b.vars[PRED_W2], Some(b.vars[PRED_B2]))?;
        g.add(zs[k - 1], d)
    }

    /// One-step prediction from `K` latents and `K` raw normalized action chunks.
    pub fn predict_graph(&self, g: &mut Graph, b: &Bound, zs: &[Var], actions: &[Var]) -> Result<Var> {
        let encoded = actions.iter().map(|&a| self.action_graph(g, b, a)).collect::<Result<Vec<_>>>()?;
        self.predict_encoded(g, b, zs, &encoded)
    }

    /// Autoregressive rollout: each prediction joins the history window and
    /// the oldest entry drops out. `actions` holds the `K - 1` past chunks.
    pub fn rollout_graph(&self, g: &mut Graph, b: &Bound, zs: &[Var], past: &[Var], future: &[Var]) -> Result<Vec<Var>> {
        let k = self.config.history;
        if zs.len() != k || past.len() + 1 != k {
            return Err(Error::Contract(format!("rollout needs {k} latents and {} past actions", k - 1)));
        }
        if future.is_empty() {
            return Err(Error::Contract("rollout horizon must be at least 1".into()));
        }
        let mut z_hist = zs.to_vec();
        let mut a_hist = past.iter().map(|&a| self.action_graph(g, b, a)).collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(future.len());
        for &a in future {
            a_hist.push(self.action_graph(g, b, a)?);
            let next = self.predict_encoded(g, b, &z_hist, &a_hist)?;
            out.push(next);
            z_hist.remove(0);
            z_hist.push(next);
            a_hist.remove(0);
        }
        Ok(out)
    }

    /// Pooling head `h(v) = W2 tanh(W1 v)`; bias-free so `h(0) = 0`.
    pub fn pool_graph(&self, g: &mut Graph, b: &Bound, v: Var) -> Result<Var> {
        let h = g.matmul(v, b.vars[POOL_W1])?;
        let h = g.tanh(h)?;
        g.matmul(h, b.vars[POOL_W2])
    }

    /// Per-row straightening cosine of `z0 → z1 → z2`, shape `[B]`.
    pub fn cosine_graph(&self, g: &mut Graph, b: &mut Bound, z0: Var, z1: Var, z2: Var, variant: CosineVariant) -> Result<Var> {
        let v1 = g.sub(z1, z0)?;
        let v2 = g.sub(z2, z1)?;
        let rows = g.value(v1).rows();
        let (m_v, d_v) = (self.config.m_v(), self.config.d_v);
        match variant {
            CosineVariant::Flatten => g.row_cosine(v1, v2),
            CosineVariant::Patch => {
                let a = g.reshape(v1, &[rows * m_v, d_v])?;
                let c = g.reshape(v2, &[rows * m_v, d_v])?;
                let per_token = g.row_cosine(a, c)?;
                let per_token = g.reshape(per_token, &[rows, m_v])?;
                let ones = g.constant(Tensor::filled(&[m_v, 1], 1.0 / m_v as f64));
                let m = g.matmul(per_token, ones)?;
                g.reshape(m, &[rows])
            }
            CosineVariant::Mean => {
                let avg = match b.avg {
                    Some(avg) => avg,
                    None => {
                        let avg = g.constant(token_average(m_v, d_v));
                        b.avg = Some(avg);
                        avg
                    }
                };
                let p1 = g.matmul(v1, avg)?;
                let p2 = g.matmul(v2, avg)?;
                g.row_cosine(p1, p2)
            }
            CosineVariant::Agg => {
                let p1 = self.pool_graph(g, b, v1)?;
                let p2 = self.pool_graph(g, b, v2)?;
                g.row_cosine(p1, p2)
            }
        }
    }

    /// Encodes a batch of flat observations without recording gradients; `[N, m_v·d_v]`.
    pub fn encode_batch(&self, obs: &[&[f64]]) -> Result<Tensor> {
        const CHUNK: usize = 256;
        let mut data = Vec::with_capacity(obs.len() * self.latent_dim());
        for chunk in obs.chunks(CHUNK) {
            let mut g = Graph::new();
            let b = self.bind(&mut g, false);
            let x = g.constant(self.input_tensor(chunk)?);
            let z = self.encode_graph(&mut g, &b, x, chunk.len())?;
            data.extend_from_slice(g.value(z).data());
        }
        Tensor::matrix(obs.len(), self.latent_dim(), data)
    }

    pub fn encode(&self, obs: &Observation) -> Result<LatentState> {
        let z = self.encode_batch(&[obs.as_slice()])?;
        Ok(self.latent(z.into_data()))
    }

    pub fn latent(&self, data: Vec<f64>) -> LatentState {
        LatentState { m_v: self.config.m_v(), d_v: self.config.d_v, data }
    }

    /// `K` latents and `K` normalized action chunks to the next latent.
    pub fn predict_next(&self, latents: &[LatentState], actions: &[Vec<f64>]) -> Result<LatentState> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let zs = latents.iter().map(|z| g.constant(Tensor::row(&z.data))).collect::<Vec<_>>();
        let acts = actions.iter().map(|a| self.chunk_var(&mut g, a)).collect::<Result<Vec<_>>>()?;
        let z = self.predict_graph(&mut g, &b, &zs, &acts)?;
        Ok(self.latent(g.value(z).data().to_vec()))
    }

    /// `H`-step rollout from `K` latents, `K - 1` past chunks and `H` future chunks.
    pub fn rollout(&self, latents: &[LatentState], past: &[Vec<f64>], future: &[Vec<f64>]) -> Result<Vec<LatentState>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let zs = latents.iter().map(|z| g.constant(Tensor::row(&z.data))).collect::<Vec<_>>();
        let past = past.iter().map(|a| self.chunk_var(&mut g, a)).collect::<Result<Vec<_>>>()?;
        let future = future.iter().map(|a| self.chunk_var(&mut g, a)).collect::<Result<Vec<_>>>()?;
        let out = self.rollout_graph(&mut g, &b, &zs, &past, &future)?;
        Ok(out.into_iter().map(|z| self.latent(g.value(z).data().to_vec())).collect())
    }

    fn chunk_var(&self, g: &mut Graph, a: &[f64]) -> Result<Var> {
        if a.len() != self.config.chunk_dim() {
            return Err(Error::dim("action chunk", format!("length {}, expected {}", a.len(), self.config.chunk_dim())));
        }
        Ok(g.constant(Tensor::row(a)))
    }

    pub fn pool(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let x = g.constant(Tensor::row(v));
        let p = self.pool_graph(&mut g, &b, x)?;
        Ok(g.value(p).data().to_vec())
    }

    /// Straightening cosine of three consecutive latents.
    pub fn straightening_cosine(&self, z0: &LatentState, z1: &LatentState, z2: &LatentState, variant: CosineVariant) -> Result<f64> {
        let mut g = Graph::new();
        let mut b = self.bind(&mut g, false);
        let [a, c, d] = [z0, z1, z2].map(|z| g.constant(Tensor::row(&z.data)));
        let cos = self.cosine_graph(&mut g, &mut b, a, c, d, variant)?;
        Ok(g.value(cos).data()[0])
    }
}

pub(crate) fn dense(g: &mut Graph, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
    let y = g.matmul(x, w)?;
    match bias {
        Some(bias) => g.add_bias(y, bias),
        None => Ok(y),
    }
}

/// `[m_v·d_v, d_v]` matrix averaging tokens channel-wise.
fn token_average(m_v: usize, d_v: usize) -> Tensor {
    let mut data = vec![0.0; m_v * d_v * d_v];
    for t in 0..m_v {
        for c in 0..d_v {
            data[(t * d_v + c) * d_v + c] = 1.0 / m_v as f64;
        }
    }
    Tensor::matrix(m_v * d_v, d_v, data).expect("shape")
}

fn param_shapes(c: &ModelConfig) -> Vec<Vec<usize>> {
    let l = c.latent_dim();
    let input = if c.state_input > 0 { c.state_input } else { c.channels * c.patch * c.patch };
    vec![
        vec![input, c.patch_embed],
        vec![c.token_width()],
        vec![c.token_width(), c.encoder_hidden],
        vec![c.encoder_hidden],
        vec![c.encoder_hidden, l],
        vec![l],
        vec![l, c.pool_hidden],
        vec![c.pool_hidden, c.d_h],
        vec![c.chunk_dim(), c.action_hidden],
        vec![c.action_hidden],
        vec![c.action_hidden, c.d_a],
        vec![c.d_a],
        vec![c.history * (l + c.d_a), c.predictor_hidden],
        vec![c.predictor_hidden],
        vec![c.predictor_hidden, l],
        vec![l],
    ]
}

fn glorot(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let (fan_in, fan_out) = (shape[0], shape[1]);
    let a = scale * (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}
