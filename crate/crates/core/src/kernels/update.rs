use crate::error::{Error, Result};
use crate::qtensor::{dequantize, quantize, round_shift, saturate_i8, FloatTensor, QuantTensor};

/// In-place INT8 SGD step:
/// `w' = sat(w - round(g * 2^(e_g - e_w - lr_shift)))`, keeping `w`'s exponent.
pub fn weight_update_int8(w: &QuantTensor, g: &QuantTensor, lr_shift: i32) -> Result<QuantTensor> {
    if w.shape() != g.shape() {
        return Err(Error::InvalidArgument(format!(
            "weight shape {:?} vs gradient shape {:?}",
            w.shape(),
            g.shape()
        )));
    }
    let shift = g.exponent() as i64 - w.exponent() as i64 - lr_shift as i64;
    let data = w
        .data()
        .iter()
        .zip(g.data())
        .map(|(&wv, &gv)| {
            let delta = if shift >= 0 {
                // Anything beyond 2^8 already saturates the result.
                (gv as i64) << shift.min(16)
            } else {
                round_shift(gv as i64, (-shift).min(63) as u32)
            };
            saturate_i8(wv as i64 - delta)
        })
        .collect();
    QuantTensor::new(data, w.shape().to_vec(), w.exponent())
}

/// FP32 master-weight SGD step; returns the new master and its quantized copy.
pub fn weight_update_fp32(
    master: &FloatTensor,
    g: &QuantTensor,
    lr: f32,
) -> Result<(FloatTensor, QuantTensor)> {
    if master.shape() != g.shape() {
        return Err(Error::InvalidArgument(format!(
            "master shape {:?} vs gradient shape {:?}",
            master.shape(),
            g.shape()
        )));
    }
    let grad = dequantize(g);
    let data = master
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&m, &d)| m - lr * d)
        .collect();
    let next = FloatTensor::new(data, master.shape().to_vec())?;
    let q = quantize(&next)?;
    Ok((next, q))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qt(data: Vec<i8>, e: i32) -> QuantTensor {
        let n = data.len();
        QuantTensor::new(data, vec![n], e).unwrap()
    }

    #[test]
    fn zero_gradient_is_identity() {
        let w = qt(vec![10, -20, 127], -3);
        let g = qt(vec![0, 0, 0], 5);
        assert_eq!(weight_update_int8(&w, &g, 0).unwrap(), w);
    }

    #[test]
    fn shifted_step() {
        let w = qt(vec![10], 0);
        let g = qt(vec![4], 0);
        assert_eq!(weight_update_int8(&w, &g, 1).unwrap().data(), &[8]);
    }

    #[test]
    fn saturates_at_lower_bound() {
        let w = qt(vec![-127], 0);
        let g = qt(vec![100], 0);
        assert_eq!(weight_update_int8(&w, &g, 0).unwrap().data(), &[-127]);
        // A huge positive shift must also clamp rather than wrap.
        let g = qt(vec![1], 60);
        assert_eq!(weight_update_int8(&w, &g, -4).unwrap().data(), &[-127]);
    }

    #[test]
    fn fp32_update_lr_zero_is_identity() {
        let m = FloatTensor::new(vec![0.5, -1.25], vec![2]).unwrap();
        let g = qt(vec![3, 4], 0);
        let (next, q) = weight_update_fp32(&m, &g, 0.0).unwrap();
        assert_eq!(next, m);
        assert_eq!(q, quantize(&m).unwrap());
    }

    #[test]
    fn fp32_update_matches_sgd() {
        let m = FloatTensor::new(vec![0.5, -1.25, 2.0], vec![3]).unwrap();
        let g = qt(vec![3, -4, 0], -2);
        let (next, q) = weight_update_fp32(&m, &g, 0.5).unwrap();
        // Plain SGD: m - lr * g with g = [0.75, -1.0, 0.0].
        assert_eq!(next.data(), &[0.125, -0.75, 2.0]);
        let half_ulp = 2f32.powi(q.exponent() - 1);
        for (a, b) in dequantize(&q).data().iter().zip(next.data()) {
            assert!((a - b).abs() <= half_ulp);
        }
    }
}
