use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LatentMode {
    #[default]
    Spatial,
    Global,
}

/// How three latents are reduced to one straightening cosine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CosineVariant {
    /// Mean of per-token cosines.
    Patch,
    /// Cosine of token-averaged velocities.
    Mean,
    /// Cosine of flattened velocities.
    Flatten,
    /// Cosine of pooling-head outputs.
    #[default]
    Agg,
}

impl FromStr for LatentMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "spatial" => Ok(Self::Spatial),
            "global" => Ok(Self::Global),
            _ => Err(format!("expected spatial|global, got '{s}'")),
        }
    }
}

impl fmt::Display for LatentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Spatial => "spatial",
            Self::Global => "global",
        })
    }
}

impl FromStr for CosineVariant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "patch" => Ok(Self::Patch),
            "mean" => Ok(Self::Mean),
            "flatten" => Ok(Self::Flatten),
            "agg" => Ok(Self::Agg),
            _ => Err(format!("expected patch|mean|flatten|agg, got '{s}'")),
        }
    }
}

impl fmt::Display for CosineVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Patch => "patch",
            Self::Mean => "mean",
            Self::Flatten => "flatten",
            Self::Agg => "agg",
        })
    }
}

/// Architecture hyperparameters. Parameter shapes depend on nothing else.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub channels: usize,
    pub patch: usize,
    /// Width of each patch embedding.
    pub patch_embed: usize,
    pub encoder_hidden: usize,
    pub d_v: usize,
    pub mode: LatentMode,
    pub d_a: usize,
    pub action_hidden: usize,
    /// Raw action width.
    pub action_dim: usize,
    /// History frames `K` seen by the predictor.
    pub history: usize,
    pub frameskip: usize,
    pub predictor_hidden: usize,
    pub pool_hidden: usize,
    pub d_h: usize,
    /// Length of state-vector observations; 0 means image observations.
    pub state_input: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            channels: 2,
            patch: 8,
            patch_embed: 16,
            encoder_hidden: 256,
            d_v: 8,
            mode: LatentMode::Spatial,
            d_a: 16,
            action_hidden: 64,
            action_dim: 2,
            history: 3,
            frameskip: 5,
            predictor_hidden: 256,
            pool_hidden: 64,
            d_h: 32,
            state_input: 0,
        }
    }
}

impl ModelConfig {
    pub fn n_patches(&self) -> usize {
        if self.state_input > 0 {
            1
        } else {
            (self.image_size / self.patch).pow(2)
        }
    }

    /// Tokens per latent.
    pub fn m_v(&self) -> usize {
        match self.mode {
            LatentMode::Spatial => self.n_patches(),
            LatentMode::Global => 1,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.m_v() * self.d_v
    }

    /// One model-level action: `frameskip` raw actions.
    pub fn chunk_dim(&self) -> usize {
        self.frameskip * self.action_dim
    }

    pub(crate) fn token_width(&self) -> usize {
        self.n_patches() * self.patch_embed
    }

    pub fn observation_len(&self) -> usize {
        if self.state_input > 0 {
            self.state_input
        } else {
            self.channels * self.image_size * self.image_size
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        for (k, v) in self.to_kv() {
            if let Ok(n) = v.parse::<usize>() {
                if n == 0 && k != "state_input" {
                    bad.push(format!("{k} must be at least 1"));
                }
            }
        }
        if self.state_input == 0 && self.patch > 0 && self.image_size % self.patch != 0 {
            bad.push(format!("patch {} does not divide image_size {}", self.patch, self.image_size));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        vec![
            ("image_size", self.image_size.to_string()),
            ("channels", self.channels.to_string()),
            ("patch", self.patch.to_string()),
            ("patch_embed", self.patch_embed.to_string()),
            ("encoder_hidden", self.encoder_hidden.to_string()),
            ("d_v", self.d_v.to_string()),
            ("mode", self.mode.to_string()),
            ("d_a", self.d_a.to_string()),
            ("action_hidden", self.action_hidden.to_string()),
            ("action_dim", self.action_dim.to_string()),
            ("history", self.history.to_string()),
            ("frameskip", self.frameskip.to_string()),
            ("predictor_hidden", self.predictor_hidden.to_string()),
            ("pool_hidden", self.pool_hidden.to_string()),
            ("d_h", self.d_h.to_string()),
            ("state_input", self.state_input.to_string()),
        ]
    }

    /// Applies one `key=value` pair. `Ok(false)` means the key is not a model key.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<bool, String> {
        let n = || value.parse::<usize>().map_err(|_| format!("{key}: expected a non-negative integer, got '{value}'"));
        match key {
            "image_size" => self.image_size = n()?,
            "channels" => self.channels = n()?,
            "patch" => self.patch = n()?,
            "patch_embed" => self.patch_embed = n()?,
            "encoder_hidden" => self.encoder_hidden = n()?,
            "d_v" => self.d_v = n()?,
            "mode" => self.mode = value.parse().map_err(|e| format!("{key}: {e}"))?,
            "d_a" => self.d_a = n()?,
            "action_hidden" => self.action_hidden = n()?,
            "action_dim" => self.action_dim = n()?,
            "history" => self.history = n()?,
            "frameskip" => self.frameskip = n()?,
            "predictor_hidden" => self.predictor_hidden = n()?,
            "pool_hidden" => self.pool_hidden = n()?,
            "d_h" => self.d_h = n()?,
            "state_input" => self.state_input = n()?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}
