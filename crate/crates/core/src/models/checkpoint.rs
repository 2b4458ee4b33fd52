//! The `TCM1` model checkpoint.
//!
//! Layout, little-endian:
//!
//! ```text
//! "TCM1" | u32 version | u32 meta length | meta JSON (UTF-8)
//! u32 parameter count
//! per parameter: u32 name length | name | u32 rank | rank × u64 dim | numel × f64
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Model, ModelConfig, ModelError, ParamStore};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"TCM1";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("malformed checkpoint at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    /// Conventions baked into the forward pass, recorded for provenance.
    pub conventions: BTreeMap<String, String>,
}

impl CheckpointMeta {
    pub fn for_model(model: &Model) -> Self {
        let mut conventions = BTreeMap::new();
        conventions.insert("vlad_normalization".into(), "intra-l2-then-global-l2".into());
        conventions.insert("head".into(), "affine-sigmoid".into());
        conventions.insert("ensemble_rule".into(), "unweighted-probability-mean".into());
        CheckpointMeta { config: *model.config(), conventions }
    }
}

pub fn encode(model: &Model) -> Vec<u8> {
    let meta = serde_json::to_vec(&CheckpointMeta::for_model(model)).expect("meta serializes");
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta);
    buf.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for (name, t) in model.params().iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.dims().len() as u32).to_le_bytes());
        for &d in t.dims() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Slice<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl Slice<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.offset.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| CheckpointError::Format {
            offset: self.offset as u64,
            detail: format!("truncated while reading {what}"),
        })?;
        let out = &self.bytes[self.offset..end];
        self.offset = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn fail<T>(&self, at: usize, detail: String) -> Result<T> {
        Err(CheckpointError::Format { offset: at as u64, detail })
    }
}

pub fn decode(bytes: &[u8]) -> Result<(CheckpointMeta, Model)> {
    let mut s = Slice { bytes, offset: 0 };
    if s.take(4, "magic")? != MAGIC {
        return s.fail(0, "bad magic, expected TCM1".into());
    }
    let version = s.u32("version")?;
    if version != VERSION {
        return s.fail(4, format!("unsupported version {version}"));
    }
    let meta_len = s.u32("meta length")? as usize;
    let at = s.offset;
    let meta: CheckpointMeta =
        serde_json::from_slice(s.take(meta_len, "meta")?).map_err(|e| CheckpointError::Format {
            offset: at as u64,
            detail: format!("meta JSON: {e}"),
        })?;
    let count = s.u32("parameter count")?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let at = s.offset;
        let name_len = s.u32("name length")? as usize;
        let name = std::str::from_utf8(s.take(name_len, "name")?)
            .map_err(|_| CheckpointError::Format { offset: at as u64, detail: "parameter name is not UTF-8".into() })?
            .to_string();
        let rank = s.u32("rank")? as usize;
        if rank > 4 {
            return s.fail(at, format!("parameter {name} has rank {rank}"));
        }
        let dims = (0..rank).map(|_| s.u64("dim").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let raw = s.take(n.saturating_mul(8), "parameter data")?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        store.insert(&name, Tensor::new(&dims, data).map_err(ModelError::from)?)?;
    }
    if s.offset != bytes.len() {
        return s.fail(s.offset, format!("{} trailing bytes", bytes.len() - s.offset));
    }
    let model = Model::from_parts(meta.config, store)?;
    Ok((meta, model))
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(model))?;
    Ok(f.sync_all()?)
}

pub fn load(path: &Path) -> Result<(CheckpointMeta, Model)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
