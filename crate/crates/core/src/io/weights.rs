//! Portable weight container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "EVMLPWT1"
//! version      u32       1
//! count        u32       number of tensors
//! count × {
//!   name_len   u32
//!   name       name_len bytes, UTF-8, unique
//!   dtype      u8        1 = f32
//!   rank       u32
//!   dims       rank × u64
//!   byte_len   u64       must equal product(dims) × 4
//!   payload    byte_len bytes, IEEE-754 f32, row-major
//! }
//! ```
//!
//! Tensors are written in canonical network order, so identical networks
//! produce identical files.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Network, NetworkConfig};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"EVMLPWT1";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn encode_tensors(tensors: &[TensorEntry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(DTYPE_F32);
        out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for d in &t.dims {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        out.extend_from_slice(&((t.values.len() * 4) as u64).to_le_bytes());
        for v in &t.values {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| {
            Error::Container(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<TensorEntry>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8, "magic")? != MAGIC {
        return Err(Error::Container("bad magic; not an EVMLPWT1 container".into()));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::Container(format!("unsupported version {version}, expected {VERSION}")));
    }
    let count = cur.u32("tensor count")? as usize;
    let mut seen = HashMap::new();
    let mut out = Vec::with_capacity(count.min(4096));
    for i in 0..count {
        let name_len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| Error::Container(format!("tensor #{i} name is not UTF-8")))?
            .to_string();
        let bad = |reason: String| Error::Tensor {
            name: name.clone(),
            reason,
        };
        if seen.insert(name.clone(), i).is_some() {
            return Err(bad("duplicate tensor name".into()));
        }
        let dtype = cur.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(bad(format!("unsupported dtype code {dtype}")));
        }
        let rank = cur.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(cur.u64("dims")? as usize);
        }
        let byte_len = cur.u64("payload length")? as usize;
        let elements = dims
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .ok_or_else(|| bad("dims overflow".into()))?;
        if elements.checked_mul(4) != Some(byte_len) {
            return Err(bad(format!(
                "payload of {byte_len} bytes does not match dims {dims:?} ({elements} f32 values)"
            )));
        }
        let payload = cur.take(byte_len, "payload")?;
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_bits(u32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        out.push(TensorEntry { name, dims, values });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Container(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok(out)
}

/// Container bytes for `net`; parameters are rounded to `f32`.
pub fn encode_weights<T: Scalar>(net: &Network<T>) -> Vec<u8> {
    let tensors: Vec<TensorEntry> = net
        .params()
        .into_iter()
        .map(|p| TensorEntry {
            name: p.name,
            dims: p.dims,
            values: p.data.iter().map(|v| v.as_f32()).collect(),
        })
        .collect();
    encode_tensors(&tensors)
}

/// Builds a network for `config` from container bytes, validating every
/// tensor before any parameter is written.
pub fn decode_weights<T: Scalar>(bytes: &[u8], config: &NetworkConfig) -> Result<Network<T>> {
    let tensors = decode_tensors(bytes)?;
    let mut by_name: HashMap<&str, &TensorEntry> = tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let mut net = Network::<T>::zeros_like(config)?;
    let mut plan = Vec::new();
    for p in net.params() {
        let t = by_name.remove(p.name.as_str()).ok_or_else(|| Error::Tensor {
            name: p.name.clone(),
            reason: "missing from container".into(),
        })?;
        if t.dims != p.dims {
            return Err(Error::Tensor {
                name: p.name.clone(),
                reason: format!("shape {:?} does not match expected {:?}", t.dims, p.dims),
            });
        }
        plan.push(t);
    }
    if let Some(extra) = by_name.keys().min() {
        return Err(Error::Tensor {
            name: extra.to_string(),
            reason: "not part of this network configuration".into(),
        });
    }
    for (p, t) in net.params_mut().into_iter().zip(plan) {
        for (dst, src) in p.data.iter_mut().zip(&t.values) {
            *dst = T::lit(*src as f64);
        }
    }
    Ok(net)
}

pub fn save_weights<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_weights(net)).map_err(|e| Error::io(path, e))
}

pub fn load_weights<T: Scalar>(path: &Path, config: &NetworkConfig) -> Result<Network<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes, config)
}
