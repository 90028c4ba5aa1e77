//! Dense `f32` tensors and the `.feat` container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset  size        field
//! 0       4           magic "OVFT"
//! 4       4           u32 version (= 1)
//! 8       4           u32 ndims
//! 12      8 * ndims   u64 dims, outermost first
//! ..      4           u32 dtype code (0 = f32)
//! ..      4 * prod    row-major f32 payload
//! ```
//!
//! The payload length must match the dims exactly; trailing or missing bytes
//! are rejected.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const FEAT_MAGIC: [u8; 4] = *b"OVFT";
pub const FEAT_VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected = element_count(&dims)
            .ok_or_else(|| Error::ShapeMismatch(format!("dims {dims:?} overflow")))?;
        if expected != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "dims {dims:?} need {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = element_count(&dims).expect("tensor dims overflow");
        Self {
            dims,
            data: vec![0.0; n],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(&FEAT_MAGIC);
        out.extend_from_slice(&FEAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&DTYPE_F32.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4)?;
        if magic != FEAT_MAGIC {
            let mut found = [0u8; 4];
            found.copy_from_slice(magic);
            return Err(Error::BadMagic { found });
        }
        let version = cur.u32()?;
        if version != FEAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let ndims = cur.u32()? as usize;
        let mut dims = Vec::with_capacity(ndims.min(16));
        for _ in 0..ndims {
            let d = cur.u64()?;
            dims.push(usize::try_from(d).map_err(|_| {
                Error::malformed(
                    "feat header",
                    format!("dimension {d} does not fit in memory"),
                )
            })?);
        }
        let dtype = cur.u32()?;
        if dtype != DTYPE_F32 {
            return Err(Error::UnsupportedDtype(dtype));
        }
        let count = element_count(&dims)
            .ok_or_else(|| Error::malformed("feat header", format!("dims {dims:?} overflow")))?;
        let payload = &bytes[cur.pos..];
        let expected = (count as u64).saturating_mul(4);
        if payload.len() as u64 != expected {
            return Err(Error::TruncatedPayload {
                expected,
                actual: payload.len() as u64,
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { dims, data })
    }
}

fn element_count(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::malformed(
                "feat header",
                format!("file ends at byte {} inside the header", self.bytes.len()),
            )),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}

pub fn load_feat(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes)
}

pub fn save_feat(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.to_bytes()).map_err(|e| Error::io(path, e))
}
