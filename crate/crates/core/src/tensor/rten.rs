//! `RTEN` raw tensor files.
//!
//! Layout (little-endian): magic `RTEN`, version byte (1), dtype byte
//! (0 = f32, 1 = f64), rank byte, `rank` u32 dims, row-major payload.

use std::path::Path;

use super::{DType, Real, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"RTEN";
pub const VERSION: u8 = 1;

/// A tensor whose element type is known only at runtime.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dims(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.dims(),
            AnyTensor::F64(t) => t.dims(),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    /// Converts to `T`, rounding if needed.
    pub fn into_real<T: Real>(self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

pub fn encode_into<T: Real>(tensor: &Tensor<T>, out: &mut Vec<u8>) {
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE as u8);
    out.push(u8::try_from(tensor.dims().len()).expect("rank fits in a byte"));
    for &d in tensor.dims() {
        out.extend_from_slice(&u32::try_from(d).expect("dim fits in u32").to_le_bytes());
    }
    out.reserve(tensor.len() * T::BYTES);
    for &v in tensor.data() {
        v.write_le(out);
    }
}

pub fn encode<T: Real>(tensor: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::new();
    encode_into(tensor, &mut out);
    out
}

/// Byte cursor that reports truncation instead of panicking.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, len: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.remaining() < len {
            return Err(Error::Truncated {
                what,
                needed: len - self.remaining(),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(slice)
    }

    pub(crate) fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn i32(&mut self, what: &'static str) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4, "magic")?.try_into().unwrap();
        if found != expected {
            return Err(Error::BadMagic { expected, found });
        }
        Ok(())
    }

    pub(crate) fn version(&mut self, supported: u8) -> Result<()> {
        let v = self.u8("version")?;
        if v != supported {
            return Err(Error::UnsupportedVersion(v));
        }
        Ok(())
    }

    pub(crate) fn reals<T: Real>(&mut self, count: usize, what: &'static str) -> Result<Vec<T>> {
        let bytes = self.take(count * T::BYTES, what)?;
        Ok(bytes.chunks_exact(T::BYTES).map(T::read_le).collect())
    }

    pub(crate) fn tensor(&mut self) -> Result<AnyTensor> {
        self.magic(MAGIC)?;
        self.version(VERSION)?;
        let dtype = self.u8("dtype")?;
        let rank = self.u8("rank")? as usize;
        if rank == 0 {
            return Err(Error::Format("RTEN rank must be at least 1".into()));
        }
        let dims = (0..rank)
            .map(|_| self.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("RTEN dims overflow: {dims:?}")))?;
        match dtype {
            0 => Ok(AnyTensor::F32(Tensor::new(&dims, self.reals(count, "payload")?)?)),
            1 => Ok(AnyTensor::F64(Tensor::new(&dims, self.reals(count, "payload")?)?)),
            other => Err(Error::Format(format!("unknown RTEN dtype {other}"))),
        }
    }
}

/// Decodes a single tensor occupying the whole buffer.
pub fn decode(bytes: &[u8]) -> Result<AnyTensor> {
    let mut r = Reader::new(bytes);
    let t = r.tensor()?;
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes after RTEN payload", r.remaining())));
    }
    Ok(t)
}

/// Decodes and requires the stored dtype to be `T`.
pub fn decode_as<T: Real>(bytes: &[u8]) -> Result<Tensor<T>> {
    let any = decode(bytes)?;
    if any.dtype() != T::DTYPE {
        return Err(Error::Format(format!(
            "expected dtype {:?}, file holds {:?}",
            T::DTYPE,
            any.dtype()
        )));
    }
    Ok(any.into_real())
}

pub fn save<T: Real>(path: impl AsRef<Path>, tensor: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(tensor)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
