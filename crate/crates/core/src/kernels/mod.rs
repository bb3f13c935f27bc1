//! Integer forward/backward operators and their FP32 reference counterparts.
//!
//! Every integer kernel reads INT8 operands and produces an exact INT32
//! accumulator (or an INT8 tensor for data-movement ops). The `reference`
//! module holds plain FP32 implementations written independently; the two
//! must agree exactly on dequantized inputs.

mod int8;
mod layout;
mod loss;
pub mod reference;
mod update;

pub use int8::{
    int8_conv2d, int8_conv_backprop_filter, int8_deconv, int8_deconv_rotated, int8_matmul,
    int8_maxpool_bwd, int8_maxpool_fwd, relu_bwd, relu_fwd, PoolParams,
};
pub use layout::{concat_batch, rotate_weights, slice_batch, transpose2d};
pub use loss::{softmax_xent_loss, LossOutput};
pub use update::{weight_update_fp32, weight_update_int8};

use crate::error::{Error, Result};

/// Longest reduction an INT8 kernel may perform: `127 * 127 * 2^16 < 2^31`.
pub const MAX_REDUCTION: usize = 1 << 16;

pub(crate) fn check_reduction(len: usize) -> Result<()> {
    if len > MAX_REDUCTION {
        Err(Error::OverflowRisk {
            len,
            max: MAX_REDUCTION,
        })
    } else {
        Ok(())
    }
}

/// Stride and zero padding of a 2-D convolution. The kernel size comes from
/// the weight shape `(OutC, InC, KH, KW)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct ConvParams {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Default for ConvParams {
    fn default() -> Self {
        Self {
            stride: (1, 1),
            padding: (0, 0),
        }
    }
}

impl ConvParams {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride: (stride, stride),
            padding: (padding, padding),
        }
    }

    /// Output spatial size for an input of `(h, w)` and kernel `(kh, kw)`.
    pub fn output_hw(
        &self,
        input: (usize, usize),
        kernel: (usize, usize),
    ) -> Result<(usize, usize)> {
        let dim = |n: usize, k: usize, s: usize, p: usize| -> Result<usize> {
            if s == 0 {
                return Err(Error::InvalidArgument("stride must be at least 1".into()));
            }
            let padded = n + 2 * p;
            if k == 0 || padded < k {
                return Err(Error::InvalidArgument(format!(
                    "kernel {k} does not fit input {n} with padding {p}"
                )));
            }
            Ok((padded - k) / s + 1)
        };
        Ok((
            dim(input.0, kernel.0, self.stride.0, self.padding.0)?,
            dim(input.1, kernel.1, self.stride.1, self.padding.1)?,
        ))
    }
}

pub(crate) fn expect_rank(shape: &[usize], rank: usize, what: &str) -> Result<()> {
    if shape.len() != rank {
        return Err(Error::InvalidArgument(format!(
            "{what} must be rank {rank}, got shape {shape:?}"
        )));
    }
    Ok(())
}

pub(crate) fn sum_exponents(a: i32, b: i32) -> Result<i32> {
    crate::qtensor::check_exponent(a as i64 + b as i64)
}
