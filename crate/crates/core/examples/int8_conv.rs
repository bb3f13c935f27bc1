//! Integer convolution against the FP32 reference on the same values.

use mptrain::kernels::{int8_conv2d, reference, ConvParams};
use mptrain::qtensor::{accum_to_f32, dequantize, QuantTensor};

fn main() -> mptrain::Result<()> {
    let x = QuantTensor::new(
        (0..32).map(|i| (i * 7 % 23 - 11) as i8).collect(),
        vec![1, 2, 4, 4],
        -3,
    )?;
    let w = QuantTensor::new(
        (0..36).map(|i| (i * 5 % 13 - 6) as i8).collect(),
        vec![2, 2, 3, 3],
        -4,
    )?;
    let p = ConvParams::new(1, 1);

    let int = accum_to_f32(&int8_conv2d(&x, &w, p)?);
    let float = reference::conv2d(&dequantize(&x), &dequantize(&w), p)?;
    let worst = int
        .data()
        .iter()
        .zip(float.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0f32, f32::max);
    println!("output shape {:?}, max |int - fp32| = {worst}", int.shape());
    Ok(())
}
