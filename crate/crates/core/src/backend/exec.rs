use std::collections::BTreeMap;

use crate::batchsplit::{sum_parts, SplitPlan};
use crate::error::{Error, Result};
use crate::kernels::{self, reference, LossOutput};
use crate::qtensor::{
    check_exponent, compute_scale_exponent, dequantize, downscale, quantize, round_shift,
    saturate_i8, shift_for_magnitude, AccumTensor, FloatTensor, QuantTensor,
};
use crate::translator::{Attrs, Node, NodeId, OpKind, Operand, TrainGraph};

/// Output of one executed node.
#[derive(Clone, Debug)]
pub enum Value {
    Quant(QuantTensor),
    /// INT32 result and the minimum shift its rescale must apply (non-zero
    /// only for micro-batch accumulations).
    Accum {
        t: AccumTensor,
        floor: u32,
    },
    /// Exact sum of micro-batch parts that may exceed INT32; `floor` is the
    /// largest shift any part alone would have needed.
    Sum {
        sum: Vec<i64>,
        shape: Vec<usize>,
        exponent: i32,
        floor: u32,
    },
    Scale(u32),
    Pool {
        out: QuantTensor,
        argmax: Vec<usize>,
    },
    Relu {
        out: QuantTensor,
        mask: Vec<bool>,
    },
    Loss(LossOutput),
}

impl Value {
    /// The INT8 tensor this value presents to consumers.
    pub fn quant(&self) -> Option<&QuantTensor> {
        match self {
            Value::Quant(q) => Some(q),
            Value::Pool { out, .. } | Value::Relu { out, .. } => Some(out),
            Value::Loss(l) => Some(&l.error),
            _ => None,
        }
    }
}

/// Staged parameter write; applied after the batch.
#[derive(Clone, Debug)]
pub enum ParamUpdate {
    Int8(QuantTensor),
    Fp32 {
        master: FloatTensor,
        quant: QuantTensor,
    },
}

/// Chooses the exponent applied at each rescale site.
pub trait ScalePolicy {
    /// `fresh` computes the exponent from the current INT32 tensor. Returns
    /// the exponent to use and whether it was recomputed.
    fn exponent(&mut self, node: NodeId, fresh: &mut dyn FnMut() -> u32) -> (u32, bool);
}

/// Recomputes every exponent every batch.
#[derive(Clone, Copy, Debug, Default)]
pub struct PerBatchRescale;

impl ScalePolicy for PerBatchRescale {
    fn exponent(&mut self, _node: NodeId, fresh: &mut dyn FnMut() -> u32) -> (u32, bool) {
        (fresh(), true)
    }
}

/// Mutable state of one training step.
pub struct ExecContext<'a> {
    pub graph: &'a TrainGraph,
    pub input: &'a FloatTensor,
    pub labels: &'a [usize],
    pub weights: &'a [QuantTensor],
    pub masters: Option<&'a [FloatTensor]>,
    pub splits: &'a BTreeMap<NodeId, SplitPlan>,
    pub scales: &'a mut dyn ScalePolicy,
    pub values: BTreeMap<NodeId, Value>,
    pub updates: BTreeMap<usize, ParamUpdate>,
    /// Rescale sites that recomputed this step.
    pub recomputed: Vec<NodeId>,
}

impl<'a> ExecContext<'a> {
    pub fn batch(&self) -> usize {
        self.input.shape()[0]
    }

    pub fn value(&self, id: NodeId) -> Result<&Value> {
        self.values
            .get(&id)
            .ok_or_else(|| Error::Run(format!("node {id} read before it ran")))
    }

    fn quant_operand(&self, op: Operand) -> Result<&QuantTensor> {
        match op {
            Operand::Node(n) => self
                .value(n)?
                .quant()
                .ok_or_else(|| Error::Run(format!("node {n} has no INT8 output"))),
            Operand::Param(p) => self
                .weights
                .get(p)
                .ok_or_else(|| Error::Run(format!("missing parameter {p}"))),
            other => Err(Error::Run(format!("{other:?} is not an INT8 operand"))),
        }
    }

    fn node_value(&self, op: Operand) -> Result<&Value> {
        match op {
            Operand::Node(n) => self.value(n),
            other => Err(Error::Run(format!("{other:?} is not a node output"))),
        }
    }
}

fn as_nchw(q: &QuantTensor, per_sample: &[usize]) -> Result<QuantTensor> {
    let mut shape = vec![q.shape()[0]];
    shape.extend_from_slice(per_sample);
    if shape == q.shape() {
        Ok(q.clone())
    } else {
        q.reshape(shape)
    }
}

fn as_matrix(q: &QuantTensor) -> Result<QuantTensor> {
    let n = q.shape()[0];
    if q.shape().len() == 2 {
        Ok(q.clone())
    } else {
        q.reshape(vec![n, q.len() / n.max(1)])
    }
}

fn concat_accum(parts: Vec<AccumTensor>) -> Result<AccumTensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Internal("no micro-batch parts".into()))?;
    let mut shape = first.shape().to_vec();
    let exponent = first.exponent();
    shape[0] = parts.iter().map(|p| p.shape()[0]).sum();
    let data = parts
        .iter()
        .flat_map(|p| p.data().iter().copied())
        .collect();
    AccumTensor::new(data, shape, exponent)
}

/// Runs `f` per micro-batch over the leading axis of `batched` (and of
/// `paired`, if given) and returns the parts in order.
fn per_micro<F>(
    plan: &SplitPlan,
    batched: &QuantTensor,
    paired: Option<&QuantTensor>,
    mut f: F,
) -> Result<Vec<AccumTensor>>
where
    F: FnMut(&QuantTensor, Option<&QuantTensor>) -> Result<AccumTensor>,
{
    plan.ranges()
        .into_iter()
        .map(|(start, len)| {
            let a = kernels::slice_batch(batched, start, len)?;
            let b = paired
                .map(|p| kernels::slice_batch(p, start, len))
                .transpose()?;
            f(&a, b.as_ref())
        })
        .collect()
}

/// Accumulates reduced micro-batch parts exactly.
fn reduce_parts(parts: &[AccumTensor]) -> Result<Value> {
    let (sum, floor) = sum_parts(parts)?;
    Ok(Value::Sum {
        sum,
        shape: parts[0].shape().to_vec(),
        exponent: parts[0].exponent(),
        floor,
    })
}

/// Executes one node, reading operands from and writing results to `ctx`.
pub fn run_node(node: &Node, ctx: &mut ExecContext) -> Result<()> {
    let split = ctx.splits.get(&node.id).filter(|p| p.is_split()).cloned();
    let arg = |i: usize| node.inputs[i];
    let value = match node.kind {
        OpKind::Quantize => Value::Quant(quantize(ctx.input)?),
        OpKind::Int8Conv => {
            let Attrs::Conv(params) = node.attrs else {
                return Err(Error::Run(format!(
                    "node {}: missing conv attributes",
                    node.id
                )));
            };
            let w = ctx.quant_operand(arg(1))?;
            let x = ctx.quant_operand(arg(0))?;
            let t = match &split {
                Some(plan) => concat_accum(per_micro(plan, x, None, |xm, _| {
                    kernels::int8_conv2d(xm, w, params)
                })?)?,
                None => kernels::int8_conv2d(x, w, params)?,
            };
            Value::Accum { t, floor: 0 }
        }
        OpKind::Int8MatMul | OpKind::Int8MatMulError => {
            let x = as_matrix(ctx.quant_operand(arg(0))?)?;
            let w = ctx.quant_operand(arg(1))?;
            let t = match &split {
                Some(plan) => concat_accum(per_micro(plan, &x, None, |xm, _| {
                    kernels::int8_matmul(xm, w)
                })?)?,
                None => kernels::int8_matmul(&x, w)?,
            };
            Value::Accum { t, floor: 0 }
        }
        OpKind::ReduceMaxScale => {
            let fresh_value = match ctx.node_value(arg(0))? {
                Value::Accum { t, floor } => compute_scale_exponent(t).max(*floor),
                Value::Sum { sum, floor, .. } => {
                    let max = sum.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0);
                    shift_for_magnitude(max).max(*floor)
                }
                _ => {
                    return Err(Error::Run(format!(
                        "node {}: expected an INT32 input",
                        node.id
                    )))
                }
            };
            let mut fresh = || fresh_value;
            let (s, recomputed) = ctx.scales.exponent(node.id, &mut fresh);
            if recomputed {
                ctx.recomputed.push(node.id);
            }
            Value::Scale(s)
        }
        OpKind::Shift => {
            let Value::Scale(s) = *ctx.node_value(arg(1))? else {
                return Err(Error::Run(format!(
                    "node {}: expected a scale input",
                    node.id
                )));
            };
            match ctx.node_value(arg(0))? {
                Value::Accum { t, .. } => Value::Quant(downscale(t, s)?),
                Value::Sum {
                    sum,
                    shape,
                    exponent,
                    ..
                } => {
                    let e = check_exponent(*exponent as i64 + s as i64)?;
                    let data = sum
                        .iter()
                        .map(|&v| saturate_i8(round_shift(v, s)))
                        .collect();
                    Value::Quant(QuantTensor::new(data, shape.clone(), e)?)
                }
                _ => {
                    return Err(Error::Run(format!(
                        "node {}: expected an INT32 input",
                        node.id
                    )))
                }
            }
        }
        OpKind::Int8MaxPool => {
            let Attrs::Pool(p) = node.attrs else {
                return Err(Error::Run(format!(
                    "node {}: missing pool attributes",
                    node.id
                )));
            };
            let (out, argmax) = kernels::int8_maxpool_fwd(ctx.quant_operand(arg(0))?, p)?;
            Value::Pool { out, argmax }
        }
        OpKind::Int8Relu => {
            let (out, mask) = kernels::relu_fwd(ctx.quant_operand(arg(0))?)?;
            Value::Relu { out, mask }
        }
        OpKind::Flatten => Value::Quant(as_matrix(ctx.quant_operand(arg(0))?)?),
        OpKind::Unflatten => Value::Quant(as_nchw(ctx.quant_operand(arg(0))?, &node.shape)?),
        OpKind::SoftmaxCrossEntropy => {
            let logits = as_matrix(ctx.quant_operand(arg(0))?)?;
            Value::Loss(kernels::softmax_xent_loss(&logits, ctx.labels)?)
        }
        OpKind::Int8ReluBackward => {
            let Value::Relu { mask, .. } = ctx.node_value(arg(1))? else {
                return Err(Error::Run(format!("node {}: aux is not a ReLU", node.id)));
            };
            let e = ctx.quant_operand(arg(0))?;
            let e = if e.len() == mask.len() {
                e.clone()
            } else {
                return Err(Error::Run(format!(
                    "node {}: error/mask size mismatch",
                    node.id
                )));
            };
            let out = kernels::relu_bwd(&e, mask)?;
            let shape = ctx.node_value(arg(1))?.quant().map(|q| q.shape().to_vec());
            Value::Quant(match shape {
                Some(s) if s != out.shape() => out.reshape(s)?,
                _ => out,
            })
        }
        OpKind::Int8MaxPoolBackward => {
            let Value::Pool { out, argmax } = ctx.node_value(arg(1))? else {
                return Err(Error::Run(format!(
                    "node {}: aux is not a max pool",
                    node.id
                )));
            };
            let e = ctx.quant_operand(arg(0))?.reshape(out.shape().to_vec())?;
            let e = &e;
            let mut shape = vec![ctx.batch()];
            shape.extend_from_slice(&node.shape);
            Value::Quant(kernels::int8_maxpool_bwd(e, argmax, &shape)?)
        }
        OpKind::WeightRotate => Value::Quant(kernels::rotate_weights(ctx.quant_operand(arg(0))?)?),
        OpKind::Transpose => Value::Quant(kernels::transpose2d(ctx.quant_operand(arg(0))?)?),
        OpKind::Int8Deconv => {
            let Attrs::Deconv { params, input_hw } = node.attrs else {
                return Err(Error::Run(format!(
                    "node {}: missing deconv attributes",
                    node.id
                )));
            };
            let w_rot = ctx.quant_operand(arg(1))?;
            let e = ctx.quant_operand(arg(0))?;
            let t = match &split {
                Some(plan) => concat_accum(per_micro(plan, e, None, |em, _| {
                    kernels::int8_deconv_rotated(em, w_rot, params, input_hw)
                })?)?,
                None => kernels::int8_deconv_rotated(e, w_rot, params, input_hw)?,
            };
            Value::Accum { t, floor: 0 }
        }
        OpKind::Int8ConvBackpropFilter => {
            let Attrs::Filter { params, kernel_hw } = node.attrs else {
                return Err(Error::Run(format!(
                    "node {}: missing filter attributes",
                    node.id
                )));
            };
            let x = ctx.quant_operand(arg(0))?;
            let e = ctx.quant_operand(arg(1))?;
            match &split {
                Some(plan) => reduce_parts(&per_micro(plan, x, Some(e), |xm, em| {
                    kernels::int8_conv_backprop_filter(xm, em.expect("paired"), params, kernel_hw)
                })?)?,
                None => Value::Accum {
                    t: kernels::int8_conv_backprop_filter(x, e, params, kernel_hw)?,
                    floor: 0,
                },
            }
        }
        OpKind::Int8MatMulBackpropFilter => {
            let x = as_matrix(ctx.quant_operand(arg(0))?)?;
            let e = as_matrix(ctx.quant_operand(arg(1))?)?;
            let xtx = |xm: &QuantTensor, em: &QuantTensor| {
                kernels::int8_matmul(&kernels::transpose2d(xm)?, em)
            };
            match &split {
                Some(plan) => reduce_parts(&per_micro(plan, &x, Some(&e), |xm, em| {
                    xtx(xm, em.expect("paired"))
                })?)?,
                None => Value::Accum {
                    t: xtx(&x, &e)?,
                    floor: 0,
                },
            }
        }
        OpKind::Int8Update => {
            let Attrs::Update { param } = node.attrs else {
                return Err(Error::Run(format!(
                    "node {}: missing update target",
                    node.id
                )));
            };
            let w = ctx.quant_operand(arg(0))?;
            let g = ctx.quant_operand(arg(1))?;
            let next = kernels::weight_update_int8(w, g, ctx.graph.lr_shift)?;
            ctx.updates.insert(param, ParamUpdate::Int8(next));
            return Ok(());
        }
        OpKind::Fp32Update => {
            let Attrs::Update { param } = node.attrs else {
                return Err(Error::Run(format!(
                    "node {}: missing update target",
                    node.id
                )));
            };
            let master = ctx
                .masters
                .and_then(|m| m.get(param))
                .ok_or_else(|| Error::Run(format!("no FP32 master for parameter {param}")))?;
            let g = ctx.quant_operand(arg(1))?;
            let (master, quant) = kernels::weight_update_fp32(master, g, ctx.graph.lr)?;
            ctx.updates
                .insert(param, ParamUpdate::Fp32 { master, quant });
            return Ok(());
        }
        OpKind::Normalization | OpKind::Round | OpKind::Sqrt => {
            let x = dequantize(ctx.quant_operand(arg(0))?);
            let y = match node.kind {
                OpKind::Normalization => reference::normalization(&x)?,
                OpKind::Round => reference::round(&x),
                _ => reference::sqrt(&x)?,
            };
            Value::Quant(quantize(&y)?)
        }
    };
    ctx.values.insert(node.id, value);
    Ok(())
}
