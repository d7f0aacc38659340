//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"LTNW"
//! version u32          (currently 1)
//! count   u64          number of parameters
//! per parameter:
//!   name_len u32, name bytes (UTF-8)
//!   rank     u32, dims (u64 each)
//!   payload  dims-product f64 values, row-major
//! ```
//!
//! Round trips are bit-exact: values are written as raw IEEE-754 bits.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use super::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"LTNW";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: expected \"LTNW\"")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("parameter name is not valid UTF-8")]
    BadName,
    #[error("trailing bytes after last parameter")]
    TrailingBytes,
    #[error("parameter tensor invalid: {0}")]
    BadTensor(String),
}

pub fn save_params(
    path: impl AsRef<Path>,
    params: &BTreeMap<String, Tensor>,
) -> Result<(), CheckpointError> {
    let mut buf = Vec::new();
    write_params(&mut buf, params)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<BTreeMap<String, Tensor>, CheckpointError> {
    let bytes = fs::read(path)?;
    read_params(&bytes)
}

pub fn write_params(
    out: &mut impl Write,
    params: &BTreeMap<String, Tensor>,
) -> Result<(), CheckpointError> {
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(params.len() as u64).to_le_bytes())?;
    for (name, tensor) in params {
        let name_bytes = name.as_bytes();
        out.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
        out.write_all(name_bytes)?;
        out.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &dim in tensor.shape() {
            out.write_all(&(dim as u64).to_le_bytes())?;
        }
        for &x in tensor.data() {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_params(bytes: &[u8]) -> Result<BTreeMap<String, Tensor>, CheckpointError> {
    let mut cursor = Cursor { bytes, pos: 0 };
    let magic = cursor.take(4)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = cursor.u32()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let count = cursor.u64()?;
    let mut params = BTreeMap::new();
    for _ in 0..count {
        let name_len = cursor.u32()? as usize;
        let name = String::from_utf8(cursor.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::BadName)?;
        let rank = cursor.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cursor.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(cursor.take(8)?.try_into().unwrap()));
        }
        let tensor =
            Tensor::new(shape, data).map_err(|e| CheckpointError::BadTensor(e.to_string()))?;
        params.insert(name, tensor);
    }
    if cursor.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes);
    }
    Ok(params)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated);
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
