use super::reference;
use crate::error::Result;
use crate::qtensor::{dequantize, quantize, QuantTensor};

#[derive(Clone, Debug)]
pub struct LossOutput {
    /// Mean cross-entropy over the batch.
    pub loss: f32,
    /// `quantize(softmax - onehot)`, the gradient of the batch-summed loss
    /// with respect to the logits.
    pub error: QuantTensor,
}

/// Softmax cross-entropy on dequantized `[N, classes]` logits.
pub fn softmax_xent_loss(logits: &QuantTensor, labels: &[usize]) -> Result<LossOutput> {
    let (loss, grad) = reference::softmax_xent(&dequantize(logits), labels)?;
    Ok(LossOutput {
        loss,
        error: quantize(&grad)?,
    })
}
