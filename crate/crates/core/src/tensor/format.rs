//! Binary tensor files.
//!
//! Layout: magic `DAFT`, `u8` version (1), `u8` dtype (0 = f32, 1 = f64),
//! `u8` rank, little-endian `u32` dims, then little-endian values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Dims, Real, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DAFT";
const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Writes a rank-4 tensor.
pub fn write_tensor<T: Real, W: Write>(tensor: &Tensor<T>, mut out: W) -> Result<()> {
    let mut buf = Vec::with_capacity(7 + 16 + tensor.len() * T::DTYPE.size());
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.push(T::DTYPE.code());
    buf.push(4);
    for d in tensor.dims().as_array() {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dim {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for &v in tensor.data() {
        v.write_le(&mut buf);
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Reads a tensor of rank 0..=4, padding missing leading dims with 1 and
/// converting the stored dtype to `T`.
pub fn read_tensor<T: Real, R: Read>(mut input: R) -> Result<Tensor<T>> {
    let mut header = [0u8; 7];
    input.read_exact(&mut header)?;
    if &header[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &header[..4])));
    }
    if header[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", header[4])));
    }
    let dtype = DType::from_code(header[5])?;
    let rank = header[6] as usize;
    if rank > 4 {
        return Err(Error::Format(format!("rank {rank} > 4 not supported")));
    }
    let mut dims = [1usize; 4];
    for slot in dims.iter_mut().skip(4 - rank) {
        let mut b = [0u8; 4];
        input.read_exact(&mut b)?;
        *slot = u32::from_le_bytes(b) as usize;
    }
    let dims = Dims::new(dims[0], dims[1], dims[2], dims[3]);
    let mut raw = vec![0u8; dims.len() * dtype.size()];
    input.read_exact(&mut raw)?;
    let data: Vec<T> = match dtype {
        DType::F32 => raw
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect(),
        DType::F64 => raw
            .chunks_exact(8)
            .map(|c| {
                let mut b = [0u8; 8];
                b.copy_from_slice(c);
                T::of(f64::from_le_bytes(b))
            })
            .collect(),
    };
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after tensor payload".into()));
    }
    Tensor::from_vec(dims, data)
}

pub fn write_tensor_file<T: Real>(tensor: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(tensor, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor_file<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    read_tensor(BufReader::new(File::open(path)?))
}
