use std::fs;
use std::path::Path;

use super::{ModelConfig, WorldModel, PARAM_NAMES};
use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::io::{Reader, Writer};

const MAGIC: &[u8; 4] = b"STCK";
const VERSION: u32 = 1;

impl WorldModel {
    /// Header (magic, version, config as `key=value` lines) followed by one
    /// block per parameter: name, rank, extents, `f64` payload, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        let text: String = self.config().to_kv().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        w.str(&text);
        w.u32(self.params().len() as u32);
        for (name, p) in PARAM_NAMES.iter().zip(self.params()) {
            w.str(name);
            w.u32(p.shape().len() as u32);
            for &d in p.shape() {
                w.u32(d as u32);
            }
            for &v in p.data() {
                w.f64(v);
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err("bad magic (expected STCK)".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let mut config = ModelConfig::default();
        for line in r.str()?.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| format!("bad config line '{line}'"))?;
            if !config.set(k, v)? {
                return Err(format!("unknown config key '{k}'"));
            }
        }
        let n = r.u32()? as usize;
        let mut params = Vec::with_capacity(n);
        for i in 0..n {
            let name = r.str()?;
            if PARAM_NAMES.get(i) != Some(&name.as_str()) {
                return Err(format!("parameter {i} is '{name}'"));
            }
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
            let len: usize = shape.iter().product();
            let data = (0..len).map(|_| r.f64()).collect::<std::result::Result<Vec<_>, _>>()?;
            params.push(Tensor::new(shape, data).map_err(|e| e.to_string())?);
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        WorldModel::from_params(config, params).map_err(|e| e.to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(Error::from)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|detail| Error::Format { path: path.display().to_string(), detail })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LatentMode;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = ModelConfig { d_v: 2, mode: LatentMode::Global, ..ModelConfig::default() };
        let m = WorldModel::new(cfg, 7).unwrap();
        let back = WorldModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), m.to_bytes());
    }

    #[test]
    fn corrupt_checkpoint_rejected() {
        let m = WorldModel::new(ModelConfig::default(), 0).unwrap();
        let bytes = m.to_bytes();
        assert!(WorldModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(WorldModel::from_bytes(&extra).is_err());
    }
}
