//! `METR` tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "METR" | version: u32 | rank: u32 | dims: rank × u64 | dtype: u32 | payload
//! ```
//!
//! `dtype` 0 is 32-bit IEEE float, 1 is 64-bit IEEE float. The payload is the
//! row-major element sequence, little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::{FrameTensor, DEFAULT_FPS};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"METR";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 0;
pub const DTYPE_F64: u32 = 1;

const MAX_RANK: u32 = 16;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }

    fn all_finite(&self) -> bool {
        match self {
            TensorData::F32(v) => v.iter().all(|x| x.is_finite()),
            TensorData::F64(v) => v.iter().all(|x| x.is_finite()),
        }
    }

    fn dtype(&self) -> u32 {
        match self {
            TensorData::F32(_) => DTYPE_F32,
            TensorData::F64(_) => DTYPE_F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<u64>,
    pub data: TensorData,
}

impl RawTensor {
    pub fn new(dims: Vec<u64>, data: TensorData) -> Result<Self> {
        let t = Self { dims, data };
        t.validate()?;
        Ok(t)
    }

    fn element_count(dims: &[u64]) -> Result<u64> {
        dims.iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format("dimension product overflows"))
    }

    fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.len() > MAX_RANK as usize {
            return Err(Error::shape(format!("unsupported rank {}", self.dims.len())));
        }
        if self.dims.contains(&0) {
            return Err(Error::shape(format!("zero-sized dimension in {:?}", self.dims)));
        }
        let n = Self::element_count(&self.dims)?;
        if n != self.data.len() as u64 {
            return Err(Error::shape(format!(
                "dims {:?} need {n} elements, payload has {}",
                self.dims,
                self.data.len()
            )));
        }
        if !self.data.all_finite() {
            return Err(Error::numerical("tensor contains non-finite values"));
        }
        Ok(())
    }

    /// Serialized size in bytes.
    pub fn encoded_len(&self) -> usize {
        let elem = match self.data {
            TensorData::F32(_) => 4,
            TensorData::F64(_) => 8,
        };
        4 + 4 + 4 + 8 * self.dims.len() + 4 + elem * self.data.len()
    }

    pub fn encode<W: Write>(&self, w: &mut W) -> Result<()> {
        self.validate()?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for d in &self.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        w.write_all(&self.data.dtype().to_le_bytes())?;
        match &self.data {
            TensorData::F32(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            TensorData::F64(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn decode<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(Error::format(format!("bad magic {magic:?}")));
        }
        let version = read_u32(r, "version")?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported version {version}")));
        }
        let rank = read_u32(r, "rank")?;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::format(format!("unsupported rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            read_exact(r, &mut b, "dims")?;
            dims.push(u64::from_le_bytes(b));
        }
        let n = Self::element_count(&dims)?;
        if n == 0 {
            return Err(Error::format(format!("zero-sized dimension in {dims:?}")));
        }
        let dtype = read_u32(r, "dtype")?;
        let data = match dtype {
            DTYPE_F32 => {
                let bytes = read_payload(r, n, 4)?;
                TensorData::F32(
                    bytes
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            DTYPE_F64 => {
                let bytes = read_payload(r, n, 8)?;
                TensorData::F64(
                    bytes
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            other => return Err(Error::format(format!("unknown dtype code {other}"))),
        };
        let t = Self { dims, data };
        t.validate().map_err(|e| match e {
            Error::Numerical(m) => Error::format(m),
            other => other,
        })?;
        Ok(t)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.encode(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let t = Self::decode(&mut r)?;
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(Error::format("trailing bytes after tensor payload"));
        }
        Ok(t)
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format(format!("truncated tensor: {what}")),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_payload<R: Read>(r: &mut R, n: u64, elem: u64) -> Result<Vec<u8>> {
    let bytes = n
        .checked_mul(elem)
        .ok_or_else(|| Error::format("payload size overflows"))?;
    let mut buf = Vec::new();
    let got = r.take(bytes).read_to_end(&mut buf)?;
    if got as u64 != bytes {
        return Err(Error::format(format!(
            "byte count mismatch: dims need {bytes} payload bytes, file has {got}"
        )));
    }
    Ok(buf)
}

impl From<&FrameTensor> for RawTensor {
    fn from(ft: &FrameTensor) -> Self {
        RawTensor {
            dims: ft.dims().iter().map(|&d| d as u64).collect(),
            data: TensorData::F32(ft.data().to_vec()),
        }
    }
}

/// Writes frames as a rank-4 `f32` container.
pub fn write_tensor(path: &Path, frames: &FrameTensor) -> Result<()> {
    RawTensor::from(frames).write(path)
}

/// Reads a rank-4 (`T×H×W×C`) or rank-3 (single frame) `f32` container.
/// The container carries no frame rate; [`DEFAULT_FPS`] is assigned.
pub fn read_tensor(path: &Path) -> Result<FrameTensor> {
    let raw = RawTensor::read(path)?;
    let dims: Vec<usize> = raw.dims.iter().map(|&d| d as usize).collect();
    let dims4 = match dims.as_slice() {
        [t, h, w, c] => [*t, *h, *w, *c],
        [h, w, c] => [1, *h, *w, *c],
        _ => return Err(Error::format(format!("frame tensor must be rank 3 or 4, got {dims:?}"))),
    };
    let data = match raw.data {
        TensorData::F32(v) => v,
        TensorData::F64(_) => return Err(Error::format("frame tensor must be f32")),
    };
    FrameTensor::new(dims4, DEFAULT_FPS, data).map_err(|e| Error::format(e.to_string()))
}
