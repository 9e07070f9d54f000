//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "CGCKPT\r\n"
//! version    u32
//! header_len u64
//! header     JSON { dtype, meta, tensors: [{name, shape, kind, offset, nbytes, crc32}] }
//! payload    concatenated raw tensors in header order
//! ```
//!
//! Offsets are relative to the start of the payload. Each tensor carries the
//! CRC32 of its payload bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::{ParamKind, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CGCKPT\r\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    kind: String,
    offset: u64,
    nbytes: u64,
    crc32: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    dtype: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

fn kind_tag(k: ParamKind) -> &'static str {
    match k {
        ParamKind::Trainable => "trainable",
        ParamKind::Frozen => "frozen",
        ParamKind::Buffer => "buffer",
    }
}

pub fn encode<T: Scalar>(store: &ParamStore<T>, meta: &serde_json::Value) -> Vec<u8> {
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    for (_, p) in store.iter() {
        let start = payload.len();
        for &v in p.value.data() {
            v.write_le(&mut payload);
        }
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.shape().to_vec(),
            kind: kind_tag(p.kind).to_string(),
            offset: start as u64,
            nbytes: (payload.len() - start) as u64,
            crc32: crc32fast::hash(&payload[start..]),
        });
    }
    let header = Header { dtype: T::DTYPE.to_string(), meta: meta.clone(), tensors };
    let hjson = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + hjson.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(hjson.len() as u64).to_le_bytes());
    out.extend_from_slice(&hjson);
    out.extend_from_slice(&payload);
    out
}

/// Write atomically through a sibling temp file. Returns the byte size.
pub fn save<T: Scalar>(path: &Path, store: &ParamStore<T>, meta: &serde_json::Value) -> Result<u64> {
    let bytes = encode(store, meta);
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(bytes.len() as u64)
}

/// Decoded checkpoint body, validated but not yet bound to a model.
pub struct Decoded {
    pub meta: serde_json::Value,
    dtype: String,
    entries: Vec<TensorEntry>,
    payload: Vec<u8>,
}

pub fn read_file(path: &Path) -> Result<Decoded> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn decode(bytes: &[u8]) -> Result<Decoded> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic bytes"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let hend = 20usize.checked_add(hlen).ok_or_else(|| bad("header length overflow"))?;
    if hend > bytes.len() {
        return Err(bad("truncated header"));
    }
    let header: Header =
        serde_json::from_slice(&bytes[20..hend]).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    let payload = bytes[hend..].to_vec();
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::Checkpoint(format!("unknown dtype {other}"))),
    };
    for t in &header.tensors {
        let n: usize = t.shape.iter().product();
        if t.nbytes as usize != n * width {
            return Err(Error::Checkpoint(format!("{}: size does not match shape", t.name)));
        }
        let end = (t.offset + t.nbytes) as usize;
        if end > payload.len() {
            return Err(Error::Checkpoint(format!("{}: truncated payload", t.name)));
        }
        if crc32fast::hash(&payload[t.offset as usize..end]) != t.crc32 {
            return Err(Error::Checkpoint(format!("{}: CRC mismatch", t.name)));
        }
    }
    Ok(Decoded { meta: header.meta, dtype: header.dtype, entries: header.tensors, payload })
}

impl Decoded {
    /// Copy every tensor into `store`. Names and shapes must match the
    /// store's table exactly; nothing is written unless all of them match.
    pub fn load_into<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        if self.entries.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model has {}",
                self.entries.len(),
                store.len()
            )));
        }
        let mut staged = Vec::with_capacity(self.entries.len());
        for (e, (id, p)) in self.entries.iter().zip(store.iter()) {
            if e.name != p.name {
                return Err(Error::Checkpoint(format!("expected tensor {}, found {}", p.name, e.name)));
            }
            if e.shape != p.shape() {
                return Err(Error::Checkpoint(format!(
                    "{}: shape {:?} in file, {:?} in model",
                    e.name,
                    e.shape,
                    p.shape()
                )));
            }
            let raw = &self.payload[e.offset as usize..(e.offset + e.nbytes) as usize];
            let data: Vec<T> = match self.dtype.as_str() {
                "f32" => raw.chunks_exact(4).map(|c| T::from_f64_lossy(f32::read_le(c) as f64)).collect(),
                _ => raw.chunks_exact(8).map(|c| T::from_f64_lossy(f64::read_le(c))).collect(),
            };
            staged.push((id, Tensor::from_vec(&e.shape, data)?));
        }
        for (id, t) in staged {
            store.get_mut(id).value = t;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.register("a.w", Tensor::from_vec(&[2, 2], vec![0.1, -0.2, 1e-30, 7.0]).unwrap(), ParamKind::Trainable);
        s.register("a.rm", Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap(), ParamKind::Buffer);
        s
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let src = store();
        let bytes = encode(&src, &serde_json::json!({"k": 1}));
        let mut zeroed = store();
        for i in 0..zeroed.len() {
            let p = zeroed.get_mut(crate::nn::params::ParamId(i));
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let dec = decode(&bytes).unwrap();
        assert_eq!(dec.meta["k"], 1);
        dec.load_into(&mut zeroed).unwrap();
        for ((_, a), (_, b)) in src.iter().zip(zeroed.iter()) {
            let ab: Vec<u32> = a.value.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.value.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn truncated_file_is_rejected_without_touching_the_model() {
        let src = store();
        let bytes = encode(&src, &serde_json::Value::Null);
        let mut dst = store();
        dst.get_mut(crate::nn::params::ParamId(0)).value.data_mut()[0] = 42.0;
        for cut in [5, 19, 30, bytes.len() - 1] {
            assert!(decode(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        assert_eq!(dst.get(crate::nn::params::ParamId(0)).value.data()[0], 42.0);
    }

    #[test]
    fn shape_mismatch_is_structured_error() {
        let bytes = encode(&store(), &serde_json::Value::Null);
        let mut other = ParamStore::<f32>::new();
        other.register("a.w", Tensor::zeros(&[4]), ParamKind::Trainable);
        other.register("a.rm", Tensor::zeros(&[3]), ParamKind::Buffer);
        let err = decode(&bytes).unwrap().load_into(&mut other).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(m) if m.contains("shape")));
        assert!(other.get(crate::nn::params::ParamId(1)).value.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn corrupted_payload_fails_crc() {
        let mut bytes = encode(&store(), &serde_json::Value::Null);
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        assert!(matches!(decode(&bytes), Err(Error::Checkpoint(m)) if m.contains("CRC")));
    }
}
