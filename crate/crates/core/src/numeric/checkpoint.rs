//! Binary checkpoint: `FILT`, a little-endian `u32` format version, then one
//! record per tensor (`u32` name length, UTF-8 name, `u32` rank, `u64` dims,
//! `f64` values) until end of file. Metadata lives in `<path>.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::params::{ModelDims, ModelParams, ParamId, ParamTensor};
use crate::error::{FiltError, Result};

pub const MAGIC: &[u8; 4] = b"FILT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub dims: ModelDims,
    pub seed: u64,
    /// Free-form snapshot of the producing configuration.
    pub config: serde_json::Value,
}

impl CheckpointMeta {
    pub fn new(dims: ModelDims, seed: u64, config: serde_json::Value) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            dims,
            seed,
            config,
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + params.num_parameters() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for t in params.tensors() {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &t.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(FiltError::checkpoint(
                field,
                format!("truncated: need {n} bytes at offset {}", self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Decode and validate against `dims`: every tensor must be present, in slot
/// order, with the expected shape.
pub fn decode(bytes: &[u8], dims: ModelDims) -> Result<ModelParams> {
    dims.check()
        .map_err(|e| FiltError::checkpoint("metadata dims", e.to_string()))?;
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(FiltError::checkpoint("magic", "not a checkpoint file"));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(FiltError::checkpoint(
            "version",
            format!("unsupported format version {version}"),
        ));
    }
    let mut tensors = Vec::with_capacity(ParamId::ALL.len());
    for id in ParamId::ALL {
        if r.done() {
            return Err(FiltError::checkpoint(
                "tensor count",
                format!("file ends before tensor `{}`", id.name()),
            ));
        }
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| FiltError::checkpoint("name", "not valid UTF-8"))?;
        if name != id.name() {
            return Err(FiltError::checkpoint(
                "name",
                format!("expected tensor `{}`, found `{name}`", id.name()),
            ));
        }
        let rank = r.u32(&format!("{name} rank"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64(&format!("{name} dims"))? as usize);
        }
        let expected = dims.shape_of(id);
        if shape != expected {
            return Err(FiltError::checkpoint(
                format!("{name} dims"),
                format!("file has {shape:?}, metadata implies {expected:?}"),
            ));
        }
        let mut t = ParamTensor::zeros(name, shape);
        let raw = r.take(8 * t.len(), &format!("{name} values"))?;
        for (v, chunk) in t.values.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        tensors.push(t);
    }
    if !r.done() {
        return Err(FiltError::checkpoint(
            "tensor count",
            format!("{} trailing bytes after the last tensor", bytes.len() - r.pos),
        ));
    }
    Ok(ModelParams::from_tensors(dims, tensors))
}

pub fn save_checkpoint(params: &ModelParams, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    if meta.dims != params.dims {
        return Err(FiltError::checkpoint(
            "metadata dims",
            "metadata does not describe these parameters",
        ));
    }
    std::fs::write(path, encode(params)).map_err(|e| FiltError::io(path, e))?;
    let side = sidecar_path(path);
    let mut json = serde_json::to_string_pretty(meta)?;
    json.push('\n');
    std::fs::write(&side, json).map_err(|e| FiltError::io(&side, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, CheckpointMeta)> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| FiltError::io(&side, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)
        .map_err(|e| FiltError::checkpoint("metadata", e.to_string()))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(FiltError::checkpoint(
            "metadata format_version",
            format!("unsupported format version {}", meta.format_version),
        ));
    }
    let bytes = std::fs::read(path).map_err(|e| FiltError::io(path, e))?;
    let params = decode(&bytes, meta.dims)?;
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims {
            num_entities: 4,
            num_relations: 2,
            num_concepts: 2,
            dim: 4,
            time_dim: 2,
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = ModelParams::init(dims(), 4).unwrap();
        let meta = CheckpointMeta::new(dims(), 4, serde_json::json!({"lr": 0.001}));
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        save_checkpoint(&p, &meta, &a).unwrap();
        let (q, m2) = load_checkpoint(&a).unwrap();
        assert_eq!(q, p);
        save_checkpoint(&q, &m2, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(
            std::fs::read(sidecar_path(&a)).unwrap(),
            std::fs::read(sidecar_path(&b)).unwrap()
        );
    }

    #[test]
    fn truncation_is_reported() {
        let bytes = encode(&ModelParams::init(dims(), 0).unwrap());
        let err = decode(&bytes[..bytes.len() - 3], dims()).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
        let err = decode(&bytes[..2], dims()).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");
    }

    #[test]
    fn dimension_mismatch_names_tensor() {
        let bytes = encode(&ModelParams::init(dims(), 0).unwrap());
        let other = ModelDims { dim: 6, ..dims() };
        let err = decode(&bytes, other).unwrap_err().to_string();
        assert!(err.contains("entity_emb dims"), "{err}");
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode(&ModelParams::init(dims(), 0).unwrap());
        bytes[4] = 9;
        assert!(decode(&bytes, dims()).unwrap_err().to_string().contains("version"));
        bytes[0] = b'X';
        assert!(decode(&bytes, dims()).unwrap_err().to_string().contains("magic"));
    }
}
