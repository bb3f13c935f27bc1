//! Data-movement ops: no arithmetic, irregular access, slow on the accelerator.

use super::expect_rank;
use crate::error::{Error, Result};
use crate::qtensor::QuantTensor;

/// `[O,C,KH,KW]` -> `[C,O,KH,KW]` with both spatial axes reversed.
pub fn rotate_weights(w: &QuantTensor) -> Result<QuantTensor> {
    expect_rank(w.shape(), 4, "weight")?;
    let (o, c, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let src = w.data();
    let mut out = vec![0i8; src.len()];
    for oc in 0..o {
        for ic in 0..c {
            for y in 0..kh {
                for x in 0..kw {
                    out[((ic * o + oc) * kh + (kh - 1 - y)) * kw + (kw - 1 - x)] =
                        src[((oc * c + ic) * kh + y) * kw + x];
                }
            }
        }
    }
    QuantTensor::new(out, vec![c, o, kh, kw], w.exponent())
}

pub fn transpose2d(m: &QuantTensor) -> Result<QuantTensor> {
    expect_rank(m.shape(), 2, "matrix")?;
    let (r, c) = (m.shape()[0], m.shape()[1]);
    let src = m.data();
    let mut out = vec![0i8; src.len()];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    QuantTensor::new(out, vec![c, r], m.exponent())
}

/// Rows `start..start + len` of the leading (batch) axis.
pub fn slice_batch(t: &QuantTensor, start: usize, len: usize) -> Result<QuantTensor> {
    let n = *t
        .shape()
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot slice a rank-0 tensor".into()))?;
    if len == 0 || start + len > n {
        return Err(Error::InvalidArgument(format!(
            "batch slice {start}..{} outside 0..{n}",
            start + len
        )));
    }
    let row = t.len() / n;
    let mut shape = t.shape().to_vec();
    shape[0] = len;
    QuantTensor::new(
        t.data()[start * row..(start + len) * row].to_vec(),
        shape,
        t.exponent(),
    )
}

/// Concatenates along the batch axis; all parts must share exponent and row shape.
pub fn concat_batch(parts: &[QuantTensor]) -> Result<QuantTensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
    let mut shape = first.shape().to_vec();
    let mut data = Vec::new();
    let mut n = 0;
    for p in parts {
        if p.shape()[1..] != first.shape()[1..] || p.exponent() != first.exponent() {
            return Err(Error::InvalidArgument(
                "batch parts disagree in row shape or exponent".into(),
            ));
        }
        n += p.shape()[0];
        data.extend_from_slice(p.data());
    }
    shape[0] = n;
    QuantTensor::new(data, shape, first.exponent())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotate_is_involution_up_to_channel_swap() {
        let w = QuantTensor::new((0..24).map(|v| v as i8).collect(), vec![2, 3, 2, 2], 1).unwrap();
        let r = rotate_weights(&w).unwrap();
        assert_eq!(r.shape(), &[3, 2, 2, 2]);
        assert_eq!(rotate_weights(&r).unwrap(), w);
        // w[0,0] = [[0,1],[2,3]] rotated -> [[3,2],[1,0]]
        assert_eq!(&r.data()[..4], &[3, 2, 1, 0]);
    }

    #[test]
    fn transpose_small() {
        let m = QuantTensor::new(vec![1, 2, 3, 4, 5, 6], vec![2, 3], 0).unwrap();
        let t = transpose2d(&m).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.data(), &[1, 4, 2, 5, 3, 6]);
    }

    #[test]
    fn slice_and_concat() {
        let t = QuantTensor::new((0..10).map(|v| v as i8).collect(), vec![5, 2], 0).unwrap();
        let a = slice_batch(&t, 0, 4).unwrap();
        let b = slice_batch(&t, 4, 1).unwrap();
        assert_eq!(concat_batch(&[a, b]).unwrap(), t);
        assert!(slice_batch(&t, 4, 2).is_err());
    }
}
