//! Little-endian tensor records: `rank: u32`, `dims: u32 * rank`,
//! `exponent: i32`, `dtype: u8` (0 = i8, 1 = i32, 2 = f32), then raw elements.

use std::io::{Read, Write};

use super::{numel, AccumTensor, FloatTensor, QuantTensor};
use crate::error::{Error, Result};

const DTYPE_I8: u8 = 0;
const DTYPE_I32: u8 = 1;
const DTYPE_F32: u8 = 2;

/// Largest element count accepted when reading, so a corrupt header cannot
/// trigger a huge allocation.
const MAX_ELEMENTS: usize = 1 << 28;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorRecord {
    I8(QuantTensor),
    I32(AccumTensor),
    F32(FloatTensor),
}

fn write_header<W: Write>(w: &mut W, shape: &[usize], exponent: i32, dtype: u8) -> Result<()> {
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&exponent.to_le_bytes())?;
    w.write_all(&[dtype])?;
    Ok(())
}

pub fn write_record<W: Write>(w: &mut W, record: &TensorRecord) -> Result<()> {
    match record {
        TensorRecord::I8(t) => {
            write_header(w, t.shape(), t.exponent(), DTYPE_I8)?;
            let bytes: Vec<u8> = t.data().iter().map(|&v| v as u8).collect();
            w.write_all(&bytes)?;
        }
        TensorRecord::I32(t) => {
            write_header(w, t.shape(), t.exponent(), DTYPE_I32)?;
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        TensorRecord::F32(t) => {
            write_header(w, t.shape(), 0, DTYPE_F32)?;
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated tensor record: {e}")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_record<R: Read>(r: &mut R) -> Result<TensorRecord> {
    let rank = read_u32(r)? as usize;
    if rank > 8 {
        return Err(Error::Format(format!("tensor rank {rank} is implausible")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(r)? as usize);
    }
    let exponent = read_u32(r)? as i32;
    let mut tag = [0u8; 1];
    read_exact(r, &mut tag)?;
    let n = numel(&shape);
    if n > MAX_ELEMENTS {
        return Err(Error::Format(format!(
            "tensor of {n} elements is too large"
        )));
    }
    let bad = |e: Error| Error::Format(format!("invalid tensor record: {e}"));
    match tag[0] {
        DTYPE_I8 => {
            let mut buf = vec![0u8; n];
            read_exact(r, &mut buf)?;
            let data = buf.into_iter().map(|b| b as i8).collect();
            QuantTensor::new(data, shape, exponent)
                .map(TensorRecord::I8)
                .map_err(bad)
        }
        DTYPE_I32 => {
            let mut buf = vec![0u8; n * 4];
            read_exact(r, &mut buf)?;
            let data = buf
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            AccumTensor::new(data, shape, exponent)
                .map(TensorRecord::I32)
                .map_err(bad)
        }
        DTYPE_F32 => {
            let mut buf = vec![0u8; n * 4];
            read_exact(r, &mut buf)?;
            let data = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            FloatTensor::new(data, shape)
                .map(TensorRecord::F32)
                .map_err(bad)
        }
        t => Err(Error::Format(format!("unknown dtype tag {t}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_little_endian() {
        let t = QuantTensor::new(vec![1, -1], vec![2, 1], -3).unwrap();
        let mut buf = Vec::new();
        write_record(&mut buf, &TensorRecord::I8(t)).unwrap();
        assert_eq!(
            buf,
            vec![2, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 0xfd, 0xff, 0xff, 0xff, 0, 1, 0xff]
        );
    }

    #[test]
    fn truncated_record_is_format_error() {
        let t = AccumTensor::new(vec![7, 8, 9], vec![3], 2).unwrap();
        let mut buf = Vec::new();
        write_record(&mut buf, &TensorRecord::I32(t)).unwrap();
        buf.pop();
        assert!(matches!(read_record(&mut &buf[..]), Err(Error::Format(_))));
    }

    #[test]
    fn unknown_dtype_rejected() {
        let buf = [1u8, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 9, 0];
        assert!(matches!(read_record(&mut &buf[..]), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn records_round_trip(
            vals in prop::collection::vec(-127i8..=127, 1..40),
            exp in -64i32..=64,
            floats in prop::collection::vec(-1e3f32..1e3, 1..10),
        ) {
            let n = vals.len();
            let records = vec![
                TensorRecord::I8(QuantTensor::new(vals.clone(), vec![n], exp).unwrap()),
                TensorRecord::I32(AccumTensor::new(vals.iter().map(|&v| v as i32 * 1000).collect(), vec![1, n], exp).unwrap()),
                TensorRecord::F32(FloatTensor::new(floats.clone(), vec![floats.len()]).unwrap()),
            ];
            let mut buf = Vec::new();
            for r in &records {
                write_record(&mut buf, r).unwrap();
            }
            let mut cur = &buf[..];
            for r in &records {
                prop_assert_eq!(&read_record(&mut cur).unwrap(), r);
            }
            prop_assert!(cur.is_empty());
        }
    }
}
