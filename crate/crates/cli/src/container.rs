//! Self-describing binary container shared by every file the tool writes.
//!
//! Layout:
//!
//! ```text
//! magic    8 bytes   "BALQUANT"
//! length   u32 LE    byte length of the manifest
//! manifest JSON      { schema_version, kind, meta, payloads: [{name, dtype, shape}] }
//! payloads           concatenated in manifest order, little-endian,
//!                    f64 and i64 as 8 bytes per element, u8 as one byte
//! ```
//!
//! Encoding is canonical: decoding a file and encoding it again reproduces
//! the same bytes.

use std::path::Path;

use balquant_core::Tensor;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"BALQUANT";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F64,
    I64,
    U8,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Data {
    F64(Vec<f64>),
    I64(Vec<i64>),
    U8(Vec<u8>),
}

impl Data {
    fn dtype(&self) -> DType {
        match self {
            Self::F64(_) => DType::F64,
            Self::I64(_) => DType::I64,
            Self::U8(_) => DType::U8,
        }
    }

    fn len(&self) -> usize {
        match self {
            Self::F64(v) => v.len(),
            Self::I64(v) => v.len(),
            Self::U8(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Payload {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Data,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PayloadInfo {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    schema_version: u32,
    kind: String,
    meta: serde_json::Value,
    payloads: Vec<PayloadInfo>,
}

/// A decoded file: kind tag, JSON metadata and named arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub payloads: Vec<Payload>,
}

impl Container {
    pub fn new(kind: &str, meta: &impl Serialize) -> Result<Self> {
        let meta = serde_json::to_value(meta).map_err(|e| Error::format(format!("encoding {kind} metadata: {e}")))?;
        Ok(Self {
            kind: kind.to_string(),
            meta,
            payloads: Vec::new(),
        })
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Data) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.payloads.push(Payload {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, t: &Tensor) {
        self.push(name, t.shape().to_vec(), Data::F64(t.data().to_vec()));
    }

    /// Fails unless the container has the expected kind.
    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::format(format!("expected a {kind} file, found {}", self.kind)));
        }
        Ok(())
    }

    pub fn meta<T: DeserializeOwned>(&self) -> Result<T> {
        T::deserialize(&self.meta).map_err(|e| Error::format(format!("{} metadata: {e}", self.kind)))
    }

    pub fn payload(&self, name: &str) -> Result<&Payload> {
        self.payloads
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::format(format!("{} file has no payload {name:?}", self.kind)))
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let p = self.payload(name)?;
        match &p.data {
            Data::F64(v) => Ok(Tensor::new(p.shape.clone(), v.clone())?),
            _ => Err(Error::format(format!("payload {name:?} is not f64"))),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<(&[usize], &[u8])> {
        let p = self.payload(name)?;
        match &p.data {
            Data::U8(v) => Ok((&p.shape, v)),
            _ => Err(Error::format(format!("payload {name:?} is not u8"))),
        }
    }

    pub fn ints(&self, name: &str) -> Result<(&[usize], &[i64])> {
        let p = self.payload(name)?;
        match &p.data {
            Data::I64(v) => Ok((&p.shape, v)),
            _ => Err(Error::format(format!("payload {name:?} is not i64"))),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            payloads: self
                .payloads
                .iter()
                .map(|p| PayloadInfo {
                    name: p.name.clone(),
                    dtype: p.data.dtype(),
                    shape: p.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::format(e.to_string()))?;
        let len = u32::try_from(json.len()).map_err(|_| Error::format("manifest larger than 4 GiB"))?;
        let mut out = Vec::with_capacity(12 + json.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&json);
        for p in &self.payloads {
            match &p.data {
                Data::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Data::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Data::U8(v) => out.extend_from_slice(v),
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(Error::format("not a balquant file (bad magic)"));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = &bytes[12..];
        if body.len() < len {
            return Err(Error::format("truncated manifest"));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..len]).map_err(|e| Error::format(format!("manifest: {e}")))?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(Error::format(format!(
                "schema version {} is not supported (expected {SCHEMA_VERSION})",
                manifest.schema_version
            )));
        }
        let mut rest = &body[len..];
        let mut payloads = Vec::with_capacity(manifest.payloads.len());
        for info in manifest.payloads {
            let n = info
                .shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::format(format!("payload {:?} is too large", info.name)))?;
            let width = if info.dtype == DType::U8 { 1 } else { 8 };
            let size = n
                .checked_mul(width)
                .filter(|&s| s <= rest.len())
                .ok_or_else(|| Error::format(format!("payload {:?} is truncated", info.name)))?;
            let (raw, tail) = rest.split_at(size);
            rest = tail;
            let words = raw.chunks_exact(8).map(|c| c.try_into().expect("8 bytes"));
            let data = match info.dtype {
                DType::F64 => Data::F64(words.map(f64::from_le_bytes).collect()),
                DType::I64 => Data::I64(words.map(i64::from_le_bytes).collect()),
                DType::U8 => Data::U8(raw.to_vec()),
            };
            payloads.push(Payload {
                name: info.name,
                shape: info.shape,
                data,
            });
        }
        if !rest.is_empty() {
            return Err(Error::format(format!("{} trailing bytes after the last payload", rest.len())));
        }
        Ok(Self {
            kind: manifest.kind,
            meta: manifest.meta,
            payloads,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new("test", &serde_json::json!({"alpha": 0.1, "n": 3})).unwrap();
        c.push("x", vec![2, 2], Data::F64(vec![1.5, -0.0, f64::MIN_POSITIVE, 1e300]));
        c.push("t", vec![3], Data::I64(vec![i64::MIN, 0, i64::MAX]));
        c.push("c", vec![3], Data::U8(vec![0, 7, 255]));
        c
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = sample().encode().unwrap();
        let back = Container::decode(&bytes).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.encode().unwrap(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = sample().encode().unwrap();
        assert_eq!(&bytes[..8], b"BALQUANT");
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 12 + len + 4 * 8 + 3 * 8 + 3);
        assert_eq!(&bytes[12 + len..12 + len + 8], &1.5f64.to_le_bytes());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample().encode().unwrap();
        assert!(Container::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Container::decode(&extra).is_err());
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(Container::decode(&magic).is_err());
    }
}
