//! `SQNV` tensor container.
//!
//! ```text
//! "SQNV" | version: u16 | count: u32
//! per entry: name_len: u32 | name (UTF-8) | dtype: u8 | rank: u8 | dims: u64 × rank | payload
//! ```
//!
//! Everything is little-endian; payloads are row-major. Entry order is kept.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"SQNV";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum TensorFileError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("payload truncated")]
    TruncatedPayload,
    #[error("{0} trailing bytes after last entry")]
    TrailingData(usize),
    #[error("duplicate entry name {0:?}")]
    DuplicateName(String),
    #[error("entry name is not UTF-8")]
    InvalidName,
    #[error("unknown element type code {0}")]
    UnknownDtype(u8),
    #[error("entry {name:?}: {len} elements do not fit dims {dims:?}")]
    ShapeMismatch { name: String, dims: Vec<u64>, len: usize },
    #[error("no entry named {0:?}")]
    Missing(String),
    #[error("entry {name:?} has type {found}, expected {expected}")]
    WrongType {
        name: String,
        found: &'static str,
        expected: &'static str,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn code(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::F64(_) => 1,
            TensorData::U8(_) => 2,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            TensorData::F32(_) => "f32",
            TensorData::F64(_) => "f64",
            TensorData::U8(_) => "u8",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u64>,
    pub data: TensorData,
}

impl Tensor {
    pub fn f32(dims: &[usize], data: Vec<f32>) -> Self {
        Self::of(dims, TensorData::F32(data))
    }

    pub fn f64(dims: &[usize], data: Vec<f64>) -> Self {
        Self::of(dims, TensorData::F64(data))
    }

    pub fn u8(dims: &[usize], data: Vec<u8>) -> Self {
        Self::of(dims, TensorData::U8(data))
    }

    fn of(dims: &[usize], data: TensorData) -> Self {
        Self {
            dims: dims.iter().map(|&d| d as u64).collect(),
            data,
        }
    }

    fn element_count(dims: &[u64]) -> Option<usize> {
        dims.iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .and_then(|n| usize::try_from(n).ok())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorFile {
    entries: Vec<(String, Tensor)>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<(), TensorFileError> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(TensorFileError::DuplicateName(name));
        }
        if Tensor::element_count(&tensor.dims) != Some(tensor.data.len()) {
            return Err(TensorFileError::ShapeMismatch {
                name,
                dims: tensor.dims,
                len: tensor.data.len(),
            });
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, TensorFileError> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| TensorFileError::Missing(name.to_string()))
    }

    pub fn f64s(&self, name: &str) -> Result<&[f64], TensorFileError> {
        match &self.get(name)?.data {
            TensorData::F64(v) => Ok(v),
            other => Err(wrong(name, other, "f64")),
        }
    }

    pub fn f32s(&self, name: &str) -> Result<&[f32], TensorFileError> {
        match &self.get(name)?.data {
            TensorData::F32(v) => Ok(v),
            other => Err(wrong(name, other, "f32")),
        }
    }

    pub fn u8s(&self, name: &str) -> Result<&[u8], TensorFileError> {
        match &self.get(name)?.data {
            TensorData::U8(v) => Ok(v),
            other => Err(wrong(name, other, "u8")),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.data.code());
            out.push(t.dims.len() as u8);
            for d in &t.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            match &t.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::U8(v) => out.extend_from_slice(v),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorFileError> {
        let mut cur = Cursor { buf: bytes, pos: 0 };
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(TensorFileError::BadMagic);
        }
        cur.pos = 4;
        let version = u16::from_le_bytes(cur.array()?);
        if version != VERSION {
            return Err(TensorFileError::UnsupportedVersion(version));
        }
        let count = u32::from_le_bytes(cur.array()?);
        let mut file = TensorFile::new();
        for _ in 0..count {
            let name_len = u32::from_le_bytes(cur.array()?) as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| TensorFileError::InvalidName)?
                .to_string();
            let [code, rank] = cur.array()?;
            let dims = (0..rank)
                .map(|_| cur.array().map(u64::from_le_bytes))
                .collect::<Result<Vec<_>, _>>()?;
            let n = Tensor::element_count(&dims).ok_or(TensorFileError::TruncatedPayload)?;
            let data = match code {
                0 => TensorData::F32(cur.elements(n, f32::from_le_bytes)?),
                1 => TensorData::F64(cur.elements(n, f64::from_le_bytes)?),
                2 => TensorData::U8(cur.take(n)?.to_vec()),
                c => return Err(TensorFileError::UnknownDtype(c)),
            };
            file.insert(name, Tensor { dims, data })?;
        }
        if cur.pos != bytes.len() {
            return Err(TensorFileError::TrailingData(bytes.len() - cur.pos));
        }
        Ok(file)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), TensorFileError> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, TensorFileError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TensorFileError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TensorFileError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn wrong(name: &str, found: &TensorData, expected: &'static str) -> TensorFileError {
    TensorFileError::WrongType {
        name: name.to_string(),
        found: found.type_name(),
        expected,
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TensorFileError> {
        let end = self.pos.checked_add(n).ok_or(TensorFileError::TruncatedPayload)?;
        let s = self.buf.get(self.pos..end).ok_or(TensorFileError::TruncatedPayload)?;
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], TensorFileError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn elements<T, const N: usize>(&mut self, n: usize, conv: fn([u8; N]) -> T) -> Result<Vec<T>, TensorFileError> {
        let bytes = self.take(n.checked_mul(N).ok_or(TensorFileError::TruncatedPayload)?)?;
        Ok(bytes
            .chunks_exact(N)
            .map(|c| conv(c.try_into().expect("chunk size")))
            .collect())
    }
}
