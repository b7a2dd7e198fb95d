//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"DWCK"  u32 version  u32 manifest_len  manifest (UTF-8 JSON)
//! per tensor: u32 name_len  name  u32 rank  rank x u64 dims  f64 values
//! u32 CRC32 of every preceding byte
//! ```
//!
//! Tensor names carry a table prefix: `params/`, `adam_m/` or `adam_v/`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ScheduleConfig, TrainConfig};
use crate::model::{ModelConfig, Parameter};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"DWCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint is corrupt or truncated (checksum mismatch)")]
    Checksum,
    #[error("unsupported checkpoint version {found} (this build reads version {VERSION})")]
    Version { found: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("tensor tables disagree at `{0}`")]
    TableMismatch(String),
}

/// Where the training random streams resume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// Stream index the next training step will use.
    pub next_stream: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub schedule: ScheduleConfig,
    pub step: u64,
    pub params: Vec<Parameter>,
    pub adam_m: Vec<Parameter>,
    pub adam_v: Vec<Parameter>,
    pub rng_state: RngState,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    model: ModelConfig,
    train: TrainConfig,
    schedule: ScheduleConfig,
    step: u64,
    rng_state: RngState,
    tensors: usize,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        self.check_tables()?;
        let manifest = Manifest {
            model: self.model.clone(),
            train: self.train.clone(),
            schedule: self.schedule,
            step: self.step,
            rng_state: self.rng_state,
            tensors: 3 * self.params.len(),
        };
        let text = serde_json::to_string(&manifest)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for (prefix, table) in [
            ("params", &self.params),
            ("adam_m", &self.adam_m),
            ("adam_v", &self.adam_v),
        ] {
            for p in table {
                let name = format!("{prefix}/{}", p.name);
                out.extend_from_slice(&(name.len() as u32).to_le_bytes());
                out.extend_from_slice(name.as_bytes());
                let shape = p.tensor.shape();
                out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
                for &d in shape {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
                for v in p.tensor.values() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < 16 {
            return Err(CheckpointError::Checksum);
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(CheckpointError::Checksum);
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version { found: version });
        }
        let manifest_len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(manifest_len)?)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let manifest: Manifest =
            serde_json::from_str(text).map_err(|e| CheckpointError::Malformed(e.to_string()))?;

        let (mut params, mut adam_m, mut adam_v) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..manifest.tensors {
            let name_len = r.u32()? as usize;
            let full = std::str::from_utf8(r.take(name_len)?)
                .map_err(|e| CheckpointError::Malformed(e.to_string()))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let bytes = shape
                .iter()
                .try_fold(8usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| CheckpointError::Malformed(format!("tensor `{full}` too large")))?;
            let raw = r.take(bytes)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let tensor =
                Tensor::new(shape, values).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            let (table, name) = match full.split_once('/') {
                Some(("params", n)) => (&mut params, n),
                Some(("adam_m", n)) => (&mut adam_m, n),
                Some(("adam_v", n)) => (&mut adam_v, n),
                _ => return Err(CheckpointError::Malformed(format!("tensor name `{full}`"))),
            };
            table.push(Parameter {
                name: name.to_string(),
                tensor,
            });
        }
        if r.pos != body.len() {
            return Err(CheckpointError::Malformed("trailing bytes".into()));
        }
        let ck = Checkpoint {
            version,
            model: manifest.model,
            train: manifest.train,
            schedule: manifest.schedule,
            step: manifest.step,
            params,
            adam_m,
            adam_v,
            rng_state: manifest.rng_state,
        };
        ck.check_tables()?;
        Ok(ck)
    }

    fn check_tables(&self) -> Result<(), CheckpointError> {
        let n = self.params.len();
        if self.adam_m.len() != n || self.adam_v.len() != n {
            let name = self
                .params
                .get(self.adam_m.len().min(self.adam_v.len()))
                .map(|p| p.name.clone())
                .unwrap_or_else(|| "<end of params>".into());
            return Err(CheckpointError::TableMismatch(name));
        }
        for ((p, m), v) in self.params.iter().zip(&self.adam_m).zip(&self.adam_v) {
            let same = p.name == m.name
                && p.name == v.name
                && p.tensor.shape() == m.tensor.shape()
                && p.tensor.shape() == v.tensor.shape();
            if !same {
                return Err(CheckpointError::TableMismatch(p.name.clone()));
            }
        }
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CheckpointError::Malformed("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let bytes = ck.to_bytes()?;
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes)
}
