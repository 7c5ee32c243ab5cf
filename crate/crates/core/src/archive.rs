//! Versioned binary container for named numeric arrays plus a JSON header.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, the
//! header as UTF-8 JSON, then every tensor's little-endian payload in header
//! order. The header carries free-form metadata and, per tensor, its name,
//! dtype and shape.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DECARBIN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U32(Vec<u32>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> &'static str {
        match self {
            TensorData::F32(_) => "f32",
            TensorData::F64(_) => "f64",
            TensorData::U32(_) => "u32",
        }
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
            TensorData::U32(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: Value,
    tensors: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Archive {
    pub meta: Value,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Archive {
    pub fn new(meta: Value) -> Self {
        Self {
            meta,
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: TensorData) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.insert(name.into(), Tensor { shape, data });
    }

    pub fn f32(&self, name: &str) -> Option<&[f32]> {
        match &self.tensors.get(name)?.data {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn f64(&self, name: &str) -> Option<&[f64]> {
        match &self.tensors.get(name)?.data {
            TensorData::F64(v) => Some(v),
            _ => None,
        }
    }

    pub fn u32(&self, name: &str) -> Option<&[u32]> {
        match &self.tensors.get(name)?.data {
            TensorData::U32(v) => Some(v),
            _ => None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| Entry {
                    name: name.clone(),
                    dtype: t.data.dtype().into(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(FORMAT_VERSION.to_le_bytes());
        out.extend((json.len() as u64).to_le_bytes());
        out.extend(json);
        for t in self.tensors.values() {
            t.data.write_le(&mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not an archive (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported archive version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let mut pos = 20 + hlen;
        let mut tensors = BTreeMap::new();
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let width = match e.dtype.as_str() {
                "f64" => 8,
                "f32" | "u32" => 4,
                other => return Err(Error::Checkpoint(format!("unknown dtype {other}"))),
            };
            let raw = bytes
                .get(pos..pos + n * width)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {} truncated", e.name)))?;
            pos += n * width;
            let data = match e.dtype.as_str() {
                "f64" => TensorData::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                "f32" => TensorData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                _ => TensorData::U32(
                    raw.chunks_exact(4)
                        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
            };
            tensors.insert(e.name, Tensor { shape: e.shape, data });
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes after last tensor"));
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }

    /// Writes to a sibling temporary file first, then renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("bin.tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes())
            .and_then(|_| f.sync_all())
            .map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> Archive {
        let mut a = Archive::new(json!({"epoch": 3, "hash": "abc"}));
        a.insert("w", vec![2, 3], TensorData::F32(vec![1.0, -2.5, 3.0, f32::MIN_POSITIVE, 0.0, 9.0]));
        a.insert("c", vec![2], TensorData::F64(vec![std::f64::consts::PI, -0.0]));
        a.insert("labels", vec![4], TensorData::U32(vec![0, 7, 7, 1]));
        a.insert("empty", vec![0], TensorData::F32(vec![]));
        a
    }

    #[test]
    fn round_trip_is_exact() {
        let a = sample();
        let b = Archive::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.f64("c").unwrap()[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(b.u32("labels"), Some(&[0, 7, 7, 1][..]));
        assert!(b.f32("labels").is_none());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        sample().save(&p).unwrap();
        assert_eq!(Archive::load(&p).unwrap(), sample());
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = sample().to_bytes();
        assert!(Archive::from_bytes(b"garbage").is_err());
        assert!(Archive::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Archive::from_bytes(&extra).is_err());
        let mut wrong_version = bytes;
        wrong_version[8] = 99;
        assert!(Archive::from_bytes(&wrong_version).is_err());
    }
}
