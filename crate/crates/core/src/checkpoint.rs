//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CORE"                     4 magic bytes
//! version                    u32 (currently 1)
//! config length, bytes       u32 + UTF-8 config snapshot
//! entry count                u32
//! per entry:
//!   name length, bytes       u32 + UTF-8 tensor name
//!   rank                     u32
//!   dims                     rank x u32
//!   data                     product(dims) x f64
//! ```
//!
//! Loading is bit-exact: `load(save(m))` reproduces every tensor and the
//! config snapshot byte for byte. Truncation errors report the byte
//! offset where the file ran out.

use std::fs;
use std::path::Path;

use crate::model::{ModelDims, ModelParams};
use crate::ndmath::{Parameters, Tensor};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CORE";
pub const VERSION: u32 = 1;

pub fn encode(entries: &[(String, Tensor)], config_text: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
    out.extend_from_slice(config_text.as_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated: needed {n} bytes at offset {}, file has {}",
                self.offset,
                self.bytes.len()
            )));
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }

    fn utf8(&mut self, n: usize) -> Result<String> {
        let b = self.take(n)?;
        String::from_utf8(b.to_vec())
            .map_err(|_| Error::Checkpoint(format!("invalid UTF-8 before offset {}", self.offset)))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Vec<(String, Tensor)>, String)> {
    let mut r = Reader { bytes, offset: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let cfg_len = r.u32()? as usize;
    let config_text = r.utf8(cfg_len)?;
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = r.utf8(name_len)?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(r.f64()?);
        }
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
        entries.push((name, t));
    }
    Ok((entries, config_text))
}

pub fn save_checkpoint(params: &ModelParams, config_text: &str, path: &Path) -> Result<()> {
    let mut entries: Vec<(String, Tensor)> = Vec::new();
    params.visit(&mut |name, t| entries.push((name.to_string(), t.clone())));
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    fs::write(path, encode(&entries, config_text))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Vec<(String, Tensor)>, String)> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    decode(&bytes)
}

/// Rebuild the parameter struct from named entries, inferring the
/// dimensions from the tensors themselves. Missing names or shape
/// inconsistencies are checkpoint errors.
pub fn model_from_entries(entries: &[(String, Tensor)]) -> Result<(ModelDims, ModelParams)> {
    let find = |name: &str| -> Result<&Tensor> {
        entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{name}'")))
    };
    let source_embed = find("source_embed")?;
    let target_embed = find("target_embed")?;
    let mode_w = find("mode_w")?;
    if source_embed.rank() != 2 || target_embed.rank() != 2 || mode_w.rank() != 1 {
        return Err(Error::Checkpoint("malformed embedding or gate shapes".into()));
    }
    let dims = ModelDims {
        source_vocab: source_embed.shape()[0],
        target_vocab: target_embed.shape()[0],
        embedding_dim: source_embed.shape()[1],
        hidden_dim: mode_w.shape()[0],
    };
    let mut params = ModelParams::init(&dims, 0);
    let mut missing: Vec<String> = Vec::new();
    let mut bad_shape: Vec<String> = Vec::new();
    params.visit_mut(&mut |name, t| {
        match entries.iter().find(|(n, _)| n == name) {
            None => missing.push(name.to_string()),
            Some((_, loaded)) => {
                if loaded.shape() != t.shape() {
                    bad_shape.push(format!(
                        "{name}: {:?} vs expected {:?}",
                        loaded.shape(),
                        t.shape()
                    ));
                } else {
                    let req = t.requires_grad;
                    *t = loaded.clone();
                    t.requires_grad = req;
                }
            }
        }
    });
    if !missing.is_empty() {
        return Err(Error::Checkpoint(format!(
            "missing tensors: {}",
            missing.join(", ")
        )));
    }
    if !bad_shape.is_empty() {
        return Err(Error::Checkpoint(format!(
            "shape mismatches: {}",
            bad_shape.join("; ")
        )));
    }
    Ok((dims, params))
}
