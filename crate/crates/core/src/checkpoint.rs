//! Versioned binary checkpoints: magic, version, a JSON metadata block and
//! named little-endian f64 arrays.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Detector, DetectorConfig};
use crate::tensor::{ParamStore, Tensor};

pub const MAGIC: [u8; 4] = *b"DSOD";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: String,
    pub seed: u64,
    pub iteration: usize,
    /// Per-level fusion weights the model is meant to run with.
    pub w_star: Option<[f64; 3]>,
    pub config: DetectorConfig,
    /// Hex digest of the run configuration that produced the checkpoint.
    pub config_digest: String,
    pub frozen: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn from_detector(det: &Detector, stage: &str, seed: u64, iteration: usize, w_star: Option<[f64; 3]>, config_digest: String) -> Self {
        Self {
            meta: CheckpointMeta {
                stage: stage.to_string(),
                seed,
                iteration,
                w_star,
                config: det.config.clone(),
                config_digest,
                frozen: det.params.frozen().map(str::to_string).collect(),
            },
            params: det.params.clone(),
        }
    }

    pub fn detector(&self) -> Detector {
        Detector {
            config: self.meta.config.clone(),
            params: self.params.clone(),
        }
    }

    /// Fusion weights stored with the model, zero when absent.
    pub fn weights(&self) -> [f64; 3] {
        self.meta.w_star.unwrap_or([0.0; 3])
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&(t.numel() as u64).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let meta_len = r.len_u64()?;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)?;
        let count = r.len_u64()?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|e| Error::InvalidArgument(format!("parameter name: {e}")))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.len_u64()).collect::<Result<Vec<_>>>()?;
            let len = r.len_u64()?;
            if shape.iter().product::<usize>() != len {
                return Err(Error::LengthMismatch { name, shape, len });
            }
            let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::InvalidArgument("array too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.insert(name, Tensor::new(shape, data)?);
        }
        for name in &meta.frozen {
            params.freeze(name)?;
        }
        Ok(Self { meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn len_u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::InvalidArgument(format!("length {v} overflows")))
    }
}
