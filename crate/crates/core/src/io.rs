//! Binary formats for tensors (`TCT1`) and chain models (`TCM1`).
//!
//! `TCT1`: magic, u32 LE order, order × u64 LE dims, f64 LE values in the
//! first-index-fastest order. `TCM1`: magic, u32 LE N, N × (u64 R_n, u64 I_n),
//! then the N cores as `TCT1` blocks.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::TcModel;
use crate::tensor::DenseTensor;

const TENSOR_MAGIC: &[u8; 4] = b"TCT1";
const MODEL_MAGIC: &[u8; 4] = b"TCM1";

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated {what}")),
        _ => Error::from(e),
    })
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact_or(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn to_usize(v: u64, what: &str) -> Result<usize> {
    usize::try_from(v).or_else(|_| format_err(format!("{what} {v} does not fit in memory")))
}

/// Writes one `TCT1` block.
pub fn write_tensor(w: &mut impl Write, t: &DenseTensor) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&(t.order() as u32).to_le_bytes())?;
    for &d in t.dims() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads one `TCT1` block, leaving the reader positioned after it.
pub fn read_tensor_block(r: &mut impl Read) -> Result<DenseTensor> {
    let mut magic = [0u8; 4];
    read_exact_or(r, &mut magic, "tensor magic")?;
    if &magic != TENSOR_MAGIC {
        return format_err(format!("bad tensor magic {magic:?}"));
    }
    let order = read_u32(r, "tensor order")? as usize;
    if order == 0 {
        return format_err("tensor order must be positive");
    }
    let mut dims = Vec::with_capacity(order);
    let mut len: usize = 1;
    for _ in 0..order {
        let d = to_usize(read_u64(r, "tensor dims")?, "dimension")?;
        if d == 0 {
            return format_err("tensor dimensions must be positive");
        }
        len = len
            .checked_mul(d)
            .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
        dims.push(d);
    }
    let mut bytes = vec![0u8; len.checked_mul(8).ok_or_else(|| Error::Format("tensor size overflows".into()))?];
    read_exact_or(r, &mut bytes, "tensor data")?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    DenseTensor::new(dims, data).map_err(|e| Error::Format(e.to_string()))
}

/// Reads a standalone `TCT1` stream; trailing bytes are an error.
pub fn read_tensor(r: &mut impl Read) -> Result<DenseTensor> {
    let t = read_tensor_block(r)?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return format_err("trailing bytes after tensor data");
    }
    Ok(t)
}

pub fn save_tensor(path: impl AsRef<Path>, t: &DenseTensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<DenseTensor> {
    read_tensor(&mut BufReader::new(File::open(path)?))
}

pub fn write_model(w: &mut impl Write, m: &TcModel) -> Result<()> {
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&(m.order() as u32).to_le_bytes())?;
    for (r, i) in m.bond_dims().into_iter().zip(m.mode_dims()) {
        w.write_all(&(r as u64).to_le_bytes())?;
        w.write_all(&(i as u64).to_le_bytes())?;
    }
    for c in m.cores() {
        write_tensor(w, c)?;
    }
    Ok(())
}

pub fn read_model(r: &mut impl Read) -> Result<TcModel> {
    let mut magic = [0u8; 4];
    read_exact_or(r, &mut magic, "model magic")?;
    if &magic != MODEL_MAGIC {
        return format_err(format!("bad model magic {magic:?}"));
    }
    let n = read_u32(r, "model order")? as usize;
    if n < 3 {
        return format_err(format!("model order {n} is below 3"));
    }
    let mut header = Vec::with_capacity(n);
    for _ in 0..n {
        let rn = to_usize(read_u64(r, "bond dims")?, "bond")?;
        let i = to_usize(read_u64(r, "mode dims")?, "mode")?;
        header.push((rn, i));
    }
    let mut cores = Vec::with_capacity(n);
    for k in 0..n {
        let c = read_tensor_block(r)?;
        let want = [header[k].0, header[k].1, header[(k + 1) % n].0];
        if c.dims() != want {
            return format_err(format!(
                "core {k} has shape {:?}, header says {want:?}",
                c.dims()
            ));
        }
        cores.push(c);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return format_err("trailing bytes after model data");
    }
    TcModel::new(cores).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_model(path: impl AsRef<Path>, m: &TcModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TcModel> {
    read_model(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DenseTensor {
        DenseTensor::from_fn(vec![2, 3, 4], |i| (i[0] + 10 * i[1] + 100 * i[2]) as f64 * 0.5)
            .unwrap()
    }

    #[test]
    fn tensor_round_trip() {
        let t = sample();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 3 * 8 + 24 * 8);
        assert_eq!(&buf[..4], b"TCT1");
        assert_eq!(read_tensor(&mut buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn rejects_trailing_and_truncated() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &sample()).unwrap();
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_tensor(&mut long.as_slice()), Err(Error::Format(_))));
        let short = &buf[..buf.len() - 3];
        assert!(matches!(read_tensor(&mut &short[..]), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_tensor(&mut bad.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn model_round_trip() {
        let cores = vec![
            DenseTensor::from_fn(vec![2, 3, 1], |i| i[0] as f64 + i[1] as f64).unwrap(),
            DenseTensor::from_fn(vec![1, 4, 3], |i| i[1] as f64 - i[2] as f64).unwrap(),
            DenseTensor::from_fn(vec![3, 2, 2], |i| (i[0] * i[1] + i[2]) as f64).unwrap(),
        ];
        let m = TcModel::new(cores).unwrap();
        let mut buf = Vec::new();
        write_model(&mut buf, &m).unwrap();
        assert_eq!(read_model(&mut buf.as_slice()).unwrap(), m);
        // corrupt a header bond dimension
        buf[8] = 5;
        assert!(read_model(&mut buf.as_slice()).is_err());
    }
}
