//! Quantize a float tensor to INT8 with a power-of-two scale, widen it,
//! and bring an INT32 accumulator back down with a rounded shift.

use mptrain::qtensor::{
    compute_scale_exponent, dequantize, downscale, quantize, AccumTensor, FloatTensor,
};

fn main() -> mptrain::Result<()> {
    let x = FloatTensor::new(vec![0.9, -0.35, 0.02, 1.7, -2.4, 0.0], vec![2, 3])?;
    let q = quantize(&x)?;
    println!("payload  {:?}", q.data());
    println!("exponent {}", q.exponent());
    println!("restored {:?}", dequantize(&q).data());

    let acc = AccumTensor::new(vec![40_000, -1_250, 7, 129], vec![4], 0)?;
    let s = compute_scale_exponent(&acc);
    let down = downscale(&acc, s)?;
    println!("shift by {s}: {:?} x 2^{}", down.data(), down.exponent());
    Ok(())
}
