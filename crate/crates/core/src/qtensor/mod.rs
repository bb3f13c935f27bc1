//! Integer tensors with a shared power-of-two scale.
//!
//! A [`QuantTensor`] stores INT8 payloads `q` together with a signed exponent
//! `e`, representing the real values `q * 2^e`. An [`AccumTensor`] holds the
//! INT32 products of two quantized operands before they are shifted back down
//! to INT8. Scale exponents are always base-2, so rescaling is a shift.

pub mod io;

pub use io::{read_record, write_record, TensorRecord};

use crate::error::{Error, Result};

/// Largest INT8 magnitude produced by quantize/downscale (symmetric range).
pub const QMAX: i32 = 127;
pub const MIN_EXPONENT: i32 = -64;
pub const MAX_EXPONENT: i32 = 64;

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "shape {shape:?} has a zero dimension"
        )));
    }
    if numel(shape) != len {
        return Err(Error::InvalidArgument(format!(
            "shape {shape:?} implies {} elements, got {len}",
            numel(shape)
        )));
    }
    Ok(())
}

pub fn check_exponent(exponent: i64) -> Result<i32> {
    if (MIN_EXPONENT as i64..=MAX_EXPONENT as i64).contains(&exponent) {
        Ok(exponent as i32)
    } else {
        Err(Error::Internal(format!(
            "exponent {exponent} outside [{MIN_EXPONENT}, {MAX_EXPONENT}]"
        )))
    }
}

/// INT8 payload with a shared power-of-two exponent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantTensor {
    data: Vec<i8>,
    shape: Vec<usize>,
    exponent: i32,
}

impl QuantTensor {
    pub fn new(data: Vec<i8>, shape: Vec<usize>, exponent: i32) -> Result<Self> {
        check_shape(&shape, data.len())?;
        check_exponent(exponent as i64)?;
        Ok(Self {
            data,
            shape,
            exponent,
        })
    }

    pub fn zeros(shape: Vec<usize>, exponent: i32) -> Result<Self> {
        Self::new(vec![0; numel(&shape)], shape, exponent)
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn exponent(&self) -> i32 {
        self.exponent
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<i8> {
        self.data
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Self::new(self.data.clone(), shape, self.exponent)
    }

    /// Widens the payload to INT32 without changing the represented values.
    pub fn widen(&self) -> AccumTensor {
        AccumTensor {
            data: self.data.iter().map(|&q| q as i32).collect(),
            shape: self.shape.clone(),
            exponent: self.exponent,
        }
    }
}

/// INT32 accumulator tensor; the exponent is the sum of the operand exponents.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccumTensor {
    data: Vec<i32>,
    shape: Vec<usize>,
    exponent: i32,
}

impl AccumTensor {
    pub fn new(data: Vec<i32>, shape: Vec<usize>, exponent: i32) -> Result<Self> {
        check_shape(&shape, data.len())?;
        check_exponent(exponent as i64)?;
        if data.contains(&i32::MIN) {
            return Err(Error::InvalidArgument(
                "accumulator holds INT32 minimum, whose magnitude is unrepresentable".into(),
            ));
        }
        Ok(Self {
            data,
            shape,
            exponent,
        })
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn exponent(&self) -> i32 {
        self.exponent
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn max_magnitude(&self) -> u32 {
        self.data
            .iter()
            .map(|v| v.unsigned_abs())
            .max()
            .unwrap_or(0)
    }
}

/// Dense FP32 tensor used by the reference path and the FP32 weight update.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatTensor {
    data: Vec<f32>,
    shape: Vec<usize>,
}

impl FloatTensor {
    pub fn new(data: Vec<f32>, shape: Vec<usize>) -> Result<Self> {
        check_shape(&shape, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("element {i} is not finite")));
        }
        Ok(Self { data, shape })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        Self::new(vec![0.0; numel(&shape)], shape)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Self::new(self.data.clone(), shape)
    }
}

/// Rounds `v / 2^s` half away from zero.
pub fn round_shift(v: i64, s: u32) -> i64 {
    if s == 0 {
        return v;
    }
    if s >= 63 {
        return 0;
    }
    let half = 1i64 << (s - 1);
    let mag = (v.unsigned_abs() as i64 + half) >> s;
    if v < 0 {
        -mag
    } else {
        mag
    }
}

/// Clamps to the symmetric INT8 range [-127, 127].
pub fn saturate_i8(v: i64) -> i8 {
    v.clamp(-(QMAX as i64), QMAX as i64) as i8
}

/// Smallest non-negative shift that brings a magnitude of `bits` significant
/// bits into 7 bits: `max(0, bits - 7)`.
pub fn shift_for_magnitude(max_magnitude: u64) -> u32 {
    let bits = 64 - max_magnitude.leading_zeros();
    bits.saturating_sub(7)
}

/// `max(0, 32 - clz(max|t|) - 7)` with `clz(0) = 32`.
pub fn compute_scale_exponent(t: &AccumTensor) -> u32 {
    let clz = t.max_magnitude().leading_zeros() as i32;
    (32 - clz - 7).max(0) as u32
}

/// Rounded right shift by `s` with symmetric saturation to INT8.
pub fn downscale(t: &AccumTensor, s: u32) -> Result<QuantTensor> {
    let exponent = check_exponent(t.exponent as i64 + s as i64)?;
    let data = t
        .data
        .iter()
        .map(|&v| saturate_i8(round_shift(v as i64, s)))
        .collect();
    Ok(QuantTensor {
        data,
        shape: t.shape.clone(),
        exponent,
    })
}

/// Picks the smallest exponent `e` with `max|x| / 2^e <= 127` and rounds
/// every element to the nearest multiple of `2^e`.
pub fn quantize(x: &FloatTensor) -> Result<QuantTensor> {
    if x.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot quantize an empty tensor".into(),
        ));
    }
    let max = x.data.iter().fold(0f64, |m, &v| m.max((v as f64).abs()));
    let exponent = if max == 0.0 {
        0
    } else {
        let mut e = (max / QMAX as f64).log2().ceil() as i64;
        while max / 2f64.powi(e as i32) > QMAX as f64 {
            e += 1;
        }
        while max / 2f64.powi(e as i32 - 1) <= QMAX as f64 {
            e -= 1;
        }
        if e > MAX_EXPONENT as i64 {
            return Err(Error::InvalidArgument(format!(
                "magnitude {max} needs exponent {e}, above {MAX_EXPONENT}"
            )));
        }
        e.max(MIN_EXPONENT as i64)
    } as i32;
    let scale = 2f64.powi(-exponent);
    let data = x
        .data
        .iter()
        .map(|&v| saturate_i8((v as f64 * scale).round() as i64))
        .collect();
    Ok(QuantTensor {
        data,
        shape: x.shape.clone(),
        exponent,
    })
}

pub fn dequantize(q: &QuantTensor) -> FloatTensor {
    let scale = 2f32.powi(q.exponent);
    FloatTensor {
        data: q.data.iter().map(|&v| v as f32 * scale).collect(),
        shape: q.shape.clone(),
    }
}

/// Real value of an INT32 accumulator as FP32 (exact while the magnitude fits 24 bits).
pub fn accum_to_f32(t: &AccumTensor) -> FloatTensor {
    let scale = 2f64.powi(t.exponent);
    FloatTensor {
        data: t.data.iter().map(|&v| (v as f64 * scale) as f32).collect(),
        shape: t.shape.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ft(data: Vec<f32>) -> FloatTensor {
        let n = data.len();
        FloatTensor::new(data, vec![n]).unwrap()
    }

    fn acc(data: Vec<i32>) -> AccumTensor {
        let n = data.len();
        AccumTensor::new(data, vec![n], 0).unwrap()
    }

    // Brute force: scan exponents upward until the max fits.
    fn oracle_exponent(max: f64) -> i32 {
        (-64..=64).find(|&e| max / 2f64.powi(e) <= 127.0).unwrap()
    }

    #[test]
    fn quantize_zero_tensor() {
        let q = quantize(&ft(vec![0.0; 4])).unwrap();
        assert_eq!(q.data(), &[0, 0, 0, 0]);
        assert_eq!(q.exponent(), 0);
    }

    #[test]
    fn quantize_examples() {
        let q = quantize(&ft(vec![127.0, -127.0])).unwrap();
        assert_eq!(q.data(), &[127, -127]);
        assert_eq!(q.exponent(), oracle_exponent(127.0));
        assert_eq!(q.exponent(), 0);

        let q = quantize(&ft(vec![254.0])).unwrap();
        assert_eq!(q.data(), &[127]);
        assert_eq!(q.exponent(), 1);
    }

    #[test]
    fn quantize_rejects_empty() {
        let x = FloatTensor {
            data: vec![],
            shape: vec![],
        };
        assert!(matches!(quantize(&x), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn dequantize_examples() {
        let q = QuantTensor::new(vec![1, -2], vec![2], 3).unwrap();
        assert_eq!(dequantize(&q).data(), &[8.0, -16.0]);
        let q = QuantTensor::new(vec![0], vec![1], 10).unwrap();
        assert_eq!(dequantize(&q).data(), &[0.0]);
        // Round trip keeps the value even though the exponent is re-derived.
        let q = QuantTensor::new(vec![5], vec![1], 2).unwrap();
        let back = quantize(&dequantize(&q)).unwrap();
        assert_eq!(dequantize(&back).data(), &[20.0]);
    }

    #[test]
    fn scale_exponent_examples() {
        assert_eq!(compute_scale_exponent(&acc(vec![0, 0])), 0);
        assert_eq!(compute_scale_exponent(&acc(vec![127, -3])), 0);
        assert_eq!(compute_scale_exponent(&acc(vec![-128, 5])), 1);
        assert_eq!(compute_scale_exponent(&acc(vec![i32::MAX])), 24);
    }

    #[test]
    fn downscale_examples() {
        let t = AccumTensor::new(vec![100], vec![1], 4).unwrap();
        let q = downscale(&t, 0).unwrap();
        assert_eq!((q.data(), q.exponent()), (&[100i8][..], 4));
        assert_eq!(downscale(&acc(vec![128]), 1).unwrap().data(), &[64]);
        assert_eq!(downscale(&acc(vec![129]), 1).unwrap().data(), &[65]);
        assert_eq!(downscale(&acc(vec![-129]), 1).unwrap().data(), &[-65]);
    }

    #[test]
    fn downscale_rejects_exponent_overflow() {
        let t = AccumTensor::new(vec![1], vec![1], 60).unwrap();
        assert!(matches!(downscale(&t, 5), Err(Error::Internal(_))));
    }

    #[test]
    fn accum_rejects_int_min() {
        assert!(AccumTensor::new(vec![i32::MIN], vec![1], 0).is_err());
    }

    proptest! {
        #[test]
        fn quantize_error_bounded(xs in prop::collection::vec(-1.0e6f32..1.0e6, 1..64)) {
            let x = ft(xs.clone());
            let q = quantize(&x).unwrap();
            let max = xs.iter().fold(0f64, |m, &v| m.max((v as f64).abs()));
            if max > 0.0 {
                prop_assert_eq!(q.exponent(), oracle_exponent(max).max(MIN_EXPONENT));
            }
            let half = 2f64.powi(q.exponent() - 1);
            for (a, b) in dequantize(&q).data().iter().zip(&xs) {
                prop_assert!(((*a as f64) - (*b as f64)).abs() <= half);
            }
            prop_assert!(q.data().iter().all(|&v| v != i8::MIN));
        }

        #[test]
        fn downscale_within_half_ulp(vals in prop::collection::vec(-(1i32 << 30)..(1i32 << 30), 1..64)) {
            let t = acc(vals.clone());
            let s = compute_scale_exponent(&t);
            let q = downscale(&t, s).unwrap();
            for (&v, &r) in vals.iter().zip(q.data()) {
                let err = (r as f64) * 2f64.powi(s as i32) - v as f64;
                // Rounding may push exactly past 127; saturation then costs up to one ULP.
                let bound = if r.unsigned_abs() == 127 { 2f64.powi(s as i32) } else { 2f64.powi(s as i32 - 1) };
                prop_assert!(err.abs() <= bound);
            }
            let q1 = downscale(&t, s + 1).unwrap();
            prop_assert!(q1.data().iter().all(|&v| v.unsigned_abs() <= 64));
        }

        #[test]
        fn quantize_scale_covariant(k in 0i32..6, raw in prop::collection::vec(-127i32..=127, 1..16)) {
            // max|x| = 127 * 2^k by construction.
            let mut data: Vec<f32> = raw.iter().map(|&v| v as f32 * 2f32.powi(k)).collect();
            data[0] = 127.0 * 2f32.powi(k);
            let a = quantize(&ft(data.clone())).unwrap();
            let b = quantize(&ft(data.iter().map(|v| v * 2.0).collect())).unwrap();
            prop_assert_eq!(b.exponent(), a.exponent() + 1);
            prop_assert_eq!(a.data(), b.data());
        }
    }
}
