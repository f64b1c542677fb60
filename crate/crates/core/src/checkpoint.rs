//! Binary container for named tensor groups plus a JSON manifest.
//!
//! Layout, all little-endian: magic `VDGNCKPT`, `u32` version, `u64` manifest
//! length, manifest bytes, `u32` tensor count, then per tensor `u32` name
//! length, name, `u32` rank, `u64` dims, `f64` data.

use std::io::{Read, Write};
use std::path::Path;

use amr_autodiff::{ParamSet, Tensor};
use indexmap::IndexMap;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"VDGNCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a checkpoint file (bad magic)")]
    Magic,
    #[error("checkpoint version {0} is not supported (expected {VERSION})")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Format(String),
    #[error("checkpoint does not match the model: {0}")]
    Mismatch(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: serde_json::Value,
    /// Group name (e.g. `main`, `target`) to parameter set.
    pub groups: IndexMap<String, ParamSet>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let manifest = serde_json::to_vec(&self.manifest).expect("json value serialises");
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        let count: usize = self.groups.values().map(ParamSet::len).sum();
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for (group, set) in &self.groups {
            for (name, t) in set.iter() {
                let full = format!("{group}/{name}");
                out.extend_from_slice(&(full.len() as u32).to_le_bytes());
                out.extend_from_slice(full.as_bytes());
                out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
                for d in t.shape() {
                    out.extend_from_slice(&(*d as u64).to_le_bytes());
                }
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let version = u32::from_le_bytes(take(&mut r)?);
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let len = u64::from_le_bytes(take(&mut r)?) as usize;
        let manifest: serde_json::Value = serde_json::from_slice(slice(&mut r, len)?).map_err(|e| CheckpointError::Format(e.to_string()))?;
        let count = u32::from_le_bytes(take(&mut r)?);
        let mut groups: IndexMap<String, ParamSet> = IndexMap::new();
        for _ in 0..count {
            let n = u32::from_le_bytes(take(&mut r)?) as usize;
            let full = std::str::from_utf8(slice(&mut r, n)?).map_err(|e| CheckpointError::Format(e.to_string()))?.to_string();
            let (group, name) = full.split_once('/').ok_or_else(|| CheckpointError::Format(format!("tensor name `{full}` has no group")))?;
            let rank = u32::from_le_bytes(take(&mut r)?) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(take(&mut r)?) as usize);
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(f64::from_le_bytes(take(&mut r)?));
            }
            let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Format(e.to_string()))?;
            groups.entry(group.to_string()).or_default().insert(name, t);
        }
        if !r.is_empty() {
            return Err(CheckpointError::Format(format!("{} trailing bytes", r.len())));
        }
        Ok(Self { manifest, groups })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = std::fs::File::create(path).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let io = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut bytes = Vec::new();
        std::fs::File::open(path).map_err(io)?.read_to_end(&mut bytes).map_err(io)?;
        Self::from_bytes(&bytes)
    }

    pub fn group(&self, name: &str) -> Result<&ParamSet, CheckpointError> {
        self.groups.get(name).ok_or_else(|| CheckpointError::Mismatch(format!("missing tensor group `{name}`")))
    }
}

/// Errors unless `found` has exactly the names and shapes of `expected`.
pub fn check_compatible(expected: &ParamSet, found: &ParamSet) -> Result<(), CheckpointError> {
    if expected.len() != found.len() {
        return Err(CheckpointError::Mismatch(format!("{} tensors expected, {} found", expected.len(), found.len())));
    }
    for ((a, ta), (b, tb)) in expected.iter().zip(found.iter()) {
        if a != b || ta.shape() != tb.shape() {
            return Err(CheckpointError::Mismatch(format!("expected `{a}` {:?}, found `{b}` {:?}", ta.shape(), tb.shape())));
        }
    }
    Ok(())
}

fn slice<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8], CheckpointError> {
    if r.len() < n {
        return Err(CheckpointError::Format("unexpected end of file".into()));
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}

fn read(r: &mut &[u8], out: &mut [u8]) -> Result<(), CheckpointError> {
    out.copy_from_slice(slice(r, out.len())?);
    Ok(())
}

fn take<const N: usize>(r: &mut &[u8]) -> Result<[u8; N], CheckpointError> {
    let mut b = [0u8; N];
    read(r, &mut b)?;
    Ok(b)
}
