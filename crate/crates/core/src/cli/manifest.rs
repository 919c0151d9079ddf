use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{Command, RunConfig};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `manifest.txt` of one output directory: the configuration hash, the seed
/// label, the full configuration and a checksum per artifact. Artifacts from
/// earlier commands are kept while the configuration hash is unchanged.
#[derive(Clone, Debug)]
pub struct Manifest {
    path: PathBuf,
    pub config_hash: String,
    pub seed: String,
    pub config: String,
    /// file name -> (producing command, sha256)
    pub artifacts: BTreeMap<String, (String, String)>,
}

impl Manifest {
    pub fn open(dir: &Path, cfg: &RunConfig, seed: &str) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let mut m = Manifest { path: path.clone(), config_hash: cfg.hash(), seed: seed.to_string(), config: cfg.to_text(), artifacts: BTreeMap::new() };
        if path.exists() {
            let old = Self::read(&path)?;
            if old.config_hash == m.config_hash {
                m.artifacts = old.artifacts;
            }
        }
        Ok(m)
    }

    pub fn record(&mut self, file: &str, bytes: &[u8], cmd: Command) {
        self.artifacts.insert(file.to_string(), (cmd.name().to_string(), sha256_hex(bytes)));
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("config_hash={}\nseed={}\n[config]\n{}[artifacts]\n", self.config_hash, self.seed, self.config);
        for (file, (cmd, sha)) in &self.artifacts {
            writeln!(s, "{sha}  {file}  {cmd}").expect("string write");
        }
        s
    }

    pub fn save(&self) -> Result<()> {
        fs::write(&self.path, self.to_text()).map_err(Error::from)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let bad = |detail: String| Error::Format { path: path.display().to_string(), detail };
        let mut m = Manifest { path: path.to_path_buf(), config_hash: String::new(), seed: String::new(), config: String::new(), artifacts: BTreeMap::new() };
        let mut section = "";
        for line in text.lines() {
            match line {
                "[config]" | "[artifacts]" => section = line,
                _ if section == "[config]" => {
                    m.config.push_str(line);
                    m.config.push('\n');
                }
                _ if section == "[artifacts]" => {
                    let parts: Vec<&str> = line.split("  ").collect();
                    let [sha, file, cmd] = parts[..] else { return Err(bad(format!("bad artifact line '{line}'"))) };
                    m.artifacts.insert(file.to_string(), (cmd.to_string(), sha.to_string()));
                }
                _ => match line.split_once('=') {
                    Some(("config_hash", v)) => m.config_hash = v.to_string(),
                    Some(("seed", v)) => m.seed = v.to_string(),
                    _ => return Err(bad(format!("unexpected line '{line}'"))),
                },
            }
        }
        if m.config_hash.is_empty() {
            return Err(bad("missing config_hash".into()));
        }
        Ok(m)
    }
}
