//! BCKP checkpoint format.
//!
//! Layout, integers little-endian:
//!   magic "BCKP", u32 version (= 1)
//!   u32 config JSON length, config JSON (serde, stable field order)
//!   u32 table entries; per entry:
//!     u32 name length, UTF-8 name
//!     u32 ndim, u32 dims...
//!     f32 LE data
//! Entries appear in canonical parameter order, so identical parameters
//! always produce identical bytes.

use super::config::ModelConfig;
use super::params::ModelParams;
use super::ModelError;
use crate::numerics::Tensor;
use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"BCKP";
const VERSION: u32 = 1;

pub fn save_checkpoint(params: &ModelParams<f32>, path: &Path) -> Result<(), ModelError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let config_json = serde_json::to_string(&params.config).expect("config serializes");
    buf.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(config_json.as_bytes());

    let named = params.named_tensors();
    buf.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, tensor) in named {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let io_err = |source| ModelError::Io { path: path.display().to_string(), source };
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(&buf).map_err(io_err)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams<f32>, ModelError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
    let p = path.display().to_string();
    let fail = |reason: String| ModelError::Checkpoint { path: p.clone(), reason };

    struct Cursor<'a> {
        bytes: &'a [u8],
        pos: usize,
    }
    impl<'a> Cursor<'a> {
        fn take(&mut self, n: usize) -> Option<&'a [u8]> {
            if self.pos + n > self.bytes.len() {
                return None;
            }
            let out = &self.bytes[self.pos..self.pos + n];
            self.pos += n;
            Some(out)
        }
        fn u32(&mut self) -> Option<u32> {
            self.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        }
    }
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    let truncated = || ModelError::Checkpoint { path: p.clone(), reason: "truncated".into() };

    if cur.take(4).ok_or_else(truncated)? != MAGIC {
        return Err(fail("bad magic".into()));
    }
    let version = cur.u32().ok_or_else(truncated)?;
    if version != VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let json_len = cur.u32().ok_or_else(truncated)? as usize;
    let config: ModelConfig = serde_json::from_slice(cur.take(json_len).ok_or_else(truncated)?)
        .map_err(|e| fail(format!("bad config blob: {e}")))?;
    config.validate()?;

    let n_entries = cur.u32().ok_or_else(truncated)? as usize;
    let mut table: HashMap<String, Tensor<f32>> = HashMap::with_capacity(n_entries);
    for _ in 0..n_entries {
        let name_len = cur.u32().ok_or_else(truncated)? as usize;
        let name = std::str::from_utf8(cur.take(name_len).ok_or_else(truncated)?)
            .map_err(|_| fail("name is not UTF-8".into()))?
            .to_string();
        let ndim = cur.u32().ok_or_else(truncated)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32().ok_or_else(truncated)? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = cur.take(numel * 4).ok_or_else(truncated)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| fail(format!("entry {name}: {e}")))?;
        if table.insert(name.clone(), tensor).is_some() {
            return Err(fail(format!("duplicate entry {name}")));
        }
    }
    if cur.pos != bytes.len() {
        return Err(fail(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }

    // assemble onto an init-shaped skeleton so shapes are validated by name
    let mut params = ModelParams::<f32>::init(&config, 0)?;
    let mut used = 0usize;
    for (name, slot) in params.named_tensors_mut() {
        let tensor = table
            .get(&name)
            .ok_or_else(|| ModelError::Checkpoint { path: p.clone(), reason: format!("missing entry {name}") })?;
        if tensor.shape() != slot.shape() {
            return Err(ModelError::Checkpoint {
                path: p.clone(),
                reason: format!(
                    "entry {name} has shape {:?}, config implies {:?}",
                    tensor.shape(),
                    slot.shape()
                ),
            });
        }
        *slot = tensor.clone();
        used += 1;
    }
    if used != table.len() {
        return Err(fail(format!("{} unexpected extra entries", table.len() - used)));
    }
    Ok(params)
}
