//! Self-describing parameter checkpoints.
//!
//! Layout (little-endian): `b"GOCM"`, version `u32`, parameter count `u32`,
//! then per parameter: name length `u32`, UTF-8 name, rank `u32`, dims
//! `u32` each, values `f64` each. A CRC32 of everything before it closes
//! the file.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GOCM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialize parameter values (optimizer state is not stored).
pub fn encode_checkpoint(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend(CHECKPOINT_VERSION.to_le_bytes());
    out.extend((params.len() as u32).to_le_bytes());
    for (name, entry) in params.iter() {
        out.extend((name.len() as u32).to_le_bytes());
        out.extend(name.as_bytes());
        let shape = entry.value.shape();
        out.extend((shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend((d as u32).to_le_bytes());
        }
        for &v in entry.value.data() {
            out.extend(v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend(crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parse a checkpoint; nothing is returned unless the whole file is valid.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamSet> {
    if bytes.len() < 16 {
        return Err(Error::Checkpoint(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint".into()));
    }
    let version = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Checkpoint(format!("CRC mismatch: stored {stored:#010x}, computed {actual:#010x}")));
    }
    let mut r = Reader { bytes: body, at: 8 };
    let count = r.u32("parameter count")?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dims")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?, "values")?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?;
        params.insert(name, t).map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    if r.at != body.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - r.at)));
    }
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &ParamSet) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Overwrite `into`'s values from a checkpoint; names and shapes must match.
pub fn restore_into(into: &mut ParamSet, from: &ParamSet) -> Result<()> {
    if into.len() != from.len() {
        return Err(Error::Checkpoint(format!("checkpoint has {} parameters, model {}", from.len(), into.len())));
    }
    into.copy_values_from(from).map_err(|e| Error::Checkpoint(e.to_string()))
}
