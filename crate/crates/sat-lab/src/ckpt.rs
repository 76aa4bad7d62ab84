//! The `SATCKPT1` checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic       8 bytes  "SATCKPT1"
//! version     u32      currently 1
//! entry count u32
//! per entry:  name len u16, UTF-8 name, rank u8, dims u32 × rank,
//!             data f32 × numel
//! metadata    u32 length prefix + UTF-8 JSON blob
//! ```
//!
//! Parameters are stored as f32 (documented precision loss from the f64
//! runtime representation); `save → load → save` is byte-identical.

use crate::config::ModelDto;
use crate::{io_err, LabError};
use sat_core::checkpoint::{Checkpoint, TrainMeta};
use sat_core::model::ModelParams;
use sat_core::Tensor;
use serde::{Deserialize, Serialize};
use std::path::Path;

const MAGIC: &[u8; 8] = b"SATCKPT1";
const VERSION: u32 = 1;

/// JSON metadata trailer.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaDto {
    spec: ModelDto,
    seed: u64,
    epoch: u32,
    config_hash: u64,
}

/// Encode a checkpoint into the binary container.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ckpt.params.len() as u32).to_le_bytes());
    for (name, tensor) in ckpt.params.iter() {
        let bytes = name.as_bytes();
        out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(bytes);
        out.push(tensor.shape().len() as u8);
        for &dim in tensor.shape() {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let meta = MetaDto {
        spec: ModelDto::from_spec(&ckpt.spec),
        seed: ckpt.meta.seed,
        epoch: ckpt.meta.epoch,
        config_hash: ckpt.meta.config_hash,
    };
    let blob = serde_json::to_vec(&meta).expect("metadata serializes");
    out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
    out.extend_from_slice(&blob);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, context: &str) -> Result<&'a [u8], LabError> {
        if self.pos + n > self.bytes.len() {
            return Err(LabError::Truncated {
                path: self.path.to_path_buf(),
                context: format!("{context}: needed {n} bytes at offset {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16_le(&mut self, context: &str) -> Result<u16, LabError> {
        let b = self.take(2, context)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32_le(&mut self, context: &str) -> Result<u32, LabError> {
        let b = self.take(4, context)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Decode the binary container. `path` is used only for error reporting.
pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint, LabError> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        path,
    };
    let magic = c.take(8, "magic")?;
    if magic != MAGIC {
        return Err(LabError::BadCheckpointMagic {
            path: path.to_path_buf(),
        });
    }
    let version = c.u32_le("version")?;
    if version != VERSION {
        return Err(LabError::BadVersion {
            path: path.to_path_buf(),
            expected: VERSION,
            got: version,
        });
    }
    let count = c.u32_le("entry count")? as usize;
    let mut params = ModelParams::new();
    for i in 0..count {
        let name_len = c.u16_le("name length")? as usize;
        let name_bytes = c.take(name_len, "name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| LabError::Truncated {
                path: path.to_path_buf(),
                context: format!("entry {i}: name is not UTF-8"),
            })?
            .to_string();
        let rank = c.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32_le("dimension")? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = c.take(numel * 4, "tensor data")?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| LabError::Truncated {
            path: path.to_path_buf(),
            context: format!("entry {name}: {e}"),
        })?;
        params.insert(name, tensor);
    }
    let meta_len = c.u32_le("metadata length")? as usize;
    let blob = c.take(meta_len, "metadata")?;
    let meta: MetaDto = serde_json::from_slice(blob).map_err(|e| LabError::Config {
        path: format!("{} metadata", path.display()),
        message: e.to_string(),
    })?;
    let spec = meta.spec.to_spec()?;
    Ok(Checkpoint {
        spec,
        params,
        meta: TrainMeta {
            seed: meta.seed,
            epoch: meta.epoch,
            config_hash: meta.config_hash,
        },
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), LabError> {
    std::fs::write(path, encode_checkpoint(ckpt)).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, LabError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_checkpoint(&bytes, path)
}
