//! `CDT1` binary tensor format.
//!
//! Layout, all little-endian: magic `CDT1`, dtype code (u8, 0 = f64,
//! 1 = f32), rank (u32), one u32 per extent, then the row-major payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CDT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F64,
    F32,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F64 => 0,
            DType::F32 => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F64),
            1 => Ok(DType::F32),
            other => Err(TensorError::Format(format!("unknown dtype code {other}"))),
        }
    }
}

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor, dtype: DType) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[dtype.code()])?;
    let rank =
        u32::try_from(t.rank()).map_err(|_| TensorError::Format("rank exceeds u32".into()))?;
    w.write_all(&rank.to_le_bytes())?;
    for &n in t.shape() {
        let n =
            u32::try_from(n).map_err(|_| TensorError::Format(format!("extent {n} exceeds u32")))?;
        w.write_all(&n.to_le_bytes())?;
    }
    match dtype {
        DType::F64 => {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        DType::F32 => {
            for v in t.data() {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Reads one tensor; f32 payloads are widened to f64.
pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::Format(format!("bad magic {magic:?}")));
    }
    let mut code = [0u8; 1];
    r.read_exact(&mut code)?;
    let dtype = DType::from_code(code[0])?;
    let rank = read_u32(r)? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(r)? as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    match dtype {
        DType::F64 => {
            let mut buf = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
        }
        DType::F32 => {
            let mut buf = [0u8; 4];
            for _ in 0..n {
                r.read_exact(&mut buf)?;
                data.push(f32::from_le_bytes(buf) as f64);
            }
        }
    }
    Tensor::new(shape, data)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn save(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t, DType::F64)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    read_tensor(&mut r)
}

pub fn to_bytes(t: &Tensor, dtype: DType) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + 4 * t.rank() + 8 * t.len());
    write_tensor(&mut out, t, dtype).expect("writing to a Vec cannot fail");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2, 1], vec![1.0, -2.5]).unwrap();
        let bytes = to_bytes(&t, DType::F64);
        assert_eq!(&bytes[..4], b"CDT1");
        assert_eq!(bytes[4], 0);
        assert_eq!(&bytes[5..9], &2u32.to_le_bytes());
        assert_eq!(&bytes[9..13], &2u32.to_le_bytes());
        assert_eq!(&bytes[13..17], &1u32.to_le_bytes());
        assert_eq!(&bytes[17..25], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 17 + 16);
    }

    #[test]
    fn f32_payload_is_widened() {
        let t = Tensor::vector(vec![0.5, 3.0]);
        let bytes = to_bytes(&t, DType::F32);
        assert_eq!(bytes[4], 1);
        let back = read_tensor(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_bad_magic_and_dtype() {
        let mut bytes = to_bytes(&Tensor::scalar(1.0), DType::F64);
        bytes[4] = 7;
        assert!(matches!(
            read_tensor(&mut bytes.as_slice()),
            Err(TensorError::Format(_))
        ));
        bytes[0] = b'X';
        assert!(read_tensor(&mut bytes.as_slice()).is_err());
    }

    #[test]
    fn truncated_payload_is_io_error() {
        let bytes = to_bytes(&Tensor::vector(vec![1.0, 2.0]), DType::F64);
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(
            read_tensor(&mut &cut[..]),
            Err(TensorError::Io(_))
        ));
    }
}
