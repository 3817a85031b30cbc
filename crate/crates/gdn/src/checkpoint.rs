//! Single-file model checkpoints.
//!
//! Layout (little-endian): magic `GCKP`, `u32` version, `u32` length and
//! JSON text of the [`ModelConfig`], `u32` tensor count, then per tensor a
//! `u32` name length, the UTF-8 name, `u32` rank, `u32` dims, a `u8` dtype
//! (0 real, 1 complex) and the `f64` values, complex ones as interleaved
//! `(re, im)` pairs.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{GdnError, Result};
use crate::model::{Gdn, GdnParams, ModelConfig};
use crate::tensor::{Parameters, Tensor};

pub const MAGIC: &[u8; 4] = b"GCKP";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| GdnError::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(config: &ModelConfig, params: &GdnParams) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&VERSION.to_le_bytes());
    let json = serde_json::to_vec(config)?;
    put_u32(&mut out, json.len())?;
    out.extend_from_slice(&json);
    let mut tensors = Vec::new();
    params.visit(&mut |name, t| tensors.push((name.to_string(), t.clone())));
    put_u32(&mut out, tensors.len())?;
    for (name, t) in &tensors {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        out.push(u8::from(t.is_complex()));
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            GdnError::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Gdn> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(GdnError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(GdnError::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
    }
    let json_len = r.u32()?;
    let config: ModelConfig = serde_json::from_slice(r.take(json_len)?)?;
    let count = r.u32()?;
    let mut stored = HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| GdnError::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let complex = match r.take(1)?[0] {
            0 => false,
            1 => true,
            d => return Err(GdnError::Checkpoint(format!("tensor `{name}` has unknown dtype {d}"))),
        };
        let n = shape
            .iter()
            .try_fold(if complex { 2usize } else { 1 }, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| GdnError::Checkpoint(format!("tensor `{name}` is too large")))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| GdnError::Checkpoint("size overflow".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let t = Tensor::from_data(&shape, data, complex).expect("length checked");
        if stored.insert(name.clone(), t).is_some() {
            return Err(GdnError::Checkpoint(format!("duplicate tensor `{name}`")));
        }
    }
    if r.pos != bytes.len() {
        return Err(GdnError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let mut model = Gdn::zeroed(config.clone())?;
    let mut problem = None;
    model.params.visit_mut(&mut |name, t| {
        if problem.is_some() {
            return;
        }
        match stored.remove(name) {
            Some(s) if s.shape() == t.shape() && s.is_complex() == t.is_complex() => *t = s,
            Some(s) => {
                problem = Some(format!("tensor `{name}` has shape {:?}, expected {:?}", s.shape(), t.shape()))
            }
            None => problem = Some(format!("missing tensor `{name}`")),
        }
    });
    if let Some(p) = problem {
        return Err(GdnError::Checkpoint(p));
    }
    if let Some(extra) = stored.keys().next() {
        return Err(GdnError::Checkpoint(format!("unexpected tensor `{extra}`")));
    }
    Gdn::from_params(config, model.params)
}

pub fn save(path: &Path, config: &ModelConfig, params: &GdnParams) -> Result<()> {
    geoflow_core::data_io::atomic_write(path, &encode(config, params)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Gdn> {
    decode(&std::fs::read(path)?)
}
