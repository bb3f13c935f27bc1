use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{Initializer, NumericType, TrainingConfig};
use super::model::{ModelSpec, ResolvedLayer};
use super::registry::{OpKind, Role};
use crate::error::{Error, Result};
use crate::kernels::{ConvParams, PoolParams};
use crate::qtensor::numel;
use crate::rescale::RescaleConfig;
use crate::scheduler::{topo_order, Dag};

pub type NodeId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Fwd,
    Bwd,
    Update,
}

/// Where a node input comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operand {
    Node(NodeId),
    /// The FP32 input batch.
    Input,
    Labels,
    Param(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Attrs {
    None,
    Conv(ConvParams),
    Deconv {
        params: ConvParams,
        input_hw: (usize, usize),
    },
    Filter {
        params: ConvParams,
        kernel_hw: (usize, usize),
    },
    Pool(PoolParams),
    /// Per-sample target shape.
    Reshape(Vec<usize>),
    Update {
        param: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: OpKind,
    /// Model layer this node belongs to; `None` for the input quantizer and loss.
    pub layer: Option<usize>,
    pub phase: Phase,
    pub inputs: Vec<Operand>,
    pub attrs: Attrs,
    /// Output shape, excluding the batch dimension when `batched`.
    pub shape: Vec<usize>,
    pub batched: bool,
    pub flops_per_sample: u64,
    pub flops_fixed: u64,
    /// Cost-model key.
    pub signature: String,
    pub dsp_supported: bool,
    pub splittable: bool,
}

impl Node {
    pub fn flops(&self, batch: usize) -> u64 {
        self.flops_fixed + self.flops_per_sample * batch as u64
    }

    fn elem_bytes(&self) -> u64 {
        match self.kind.writes() {
            Some(Role::Accum) | Some(Role::Scale) => 4,
            _ => 1,
        }
    }

    /// Bytes of the output buffer at the given batch size.
    pub fn out_bytes(&self, batch: usize) -> u64 {
        let n = numel(&self.shape).max(1) as u64;
        let n = if self.batched { n * batch as u64 } else { n };
        n * self.elem_bytes()
    }

    pub fn node_inputs(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.inputs.iter().filter_map(|o| match o {
            Operand::Node(n) => Some(*n),
            _ => None,
        })
    }

    /// Full output shape at the given batch size.
    pub fn shape_at(&self, batch: usize) -> Vec<usize> {
        if self.batched {
            std::iter::once(batch)
                .chain(self.shape.iter().copied())
                .collect()
        } else {
            self.shape.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamSpec {
    pub id: usize,
    pub layer: usize,
    pub name: String,
    pub shape: Vec<usize>,
    /// Fan-in and fan-out used by the initializer.
    pub fans: (usize, usize),
}

/// Mixed-precision training graph: forward chains, loss, backward chains
/// and one update per trainable weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainGraph {
    pub name: String,
    pub algorithm: String,
    pub input_shape: Vec<usize>,
    pub classes: usize,
    pub params: Vec<ParamSpec>,
    pub nodes: Vec<Node>,
    pub loss: NodeId,
    pub weight_type: NumericType,
    pub update: NumericType,
    pub initializer: Initializer,
    pub lr_shift: i32,
    pub lr: f32,
    pub rescale: RescaleConfig,
}

impl TrainGraph {
    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id as usize]
    }

    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        self.nodes
            .iter()
            .flat_map(|n| n.node_inputs().map(move |i| (i, n.id)))
            .collect()
    }

    pub fn dag(&self) -> Dag {
        Dag {
            nodes: self.nodes.iter().map(|n| n.id).collect(),
            edges: self.edges(),
        }
    }

    pub fn count(&self, kind: OpKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    /// Structural checks: ids, operand references, acyclicity, a single
    /// loss, and exactly one gradient and one update per parameter.
    pub fn validate(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id as usize != i {
                return Err(Error::Graph(format!("node {i} carries id {}", n.id)));
            }
            for op in &n.inputs {
                match *op {
                    Operand::Node(m) if m as usize >= self.nodes.len() => {
                        return Err(Error::Graph(format!("node {i} reads missing node {m}")))
                    }
                    Operand::Param(p) if p >= self.params.len() => {
                        return Err(Error::Graph(format!("node {i} reads missing param {p}")))
                    }
                    _ => {}
                }
            }
        }
        topo_order(&self.dag())?;
        let losses = self.count(OpKind::SoftmaxCrossEntropy);
        if losses != 1 || self.node(self.loss).kind != OpKind::SoftmaxCrossEntropy {
            return Err(Error::Graph(format!(
                "expected one loss node, found {losses}"
            )));
        }
        for p in &self.params {
            let updates: Vec<&Node> = self
                .nodes
                .iter()
                .filter(|n| n.attrs == Attrs::Update { param: p.id })
                .collect();
            if updates.len() != 1 {
                return Err(Error::Graph(format!(
                    "param {} has {} update nodes",
                    p.name,
                    updates.len()
                )));
            }
            if !matches!(updates[0].inputs.get(1), Some(Operand::Node(_))) {
                return Err(Error::Graph(format!("param {} has no gradient", p.name)));
            }
        }
        Ok(())
    }
}

struct Builder<'a> {
    nodes: Vec<Node>,
    params: &'a [ParamSpec],
}

/// Shape and batch flag of an operand.
fn operand_shape(b: &Builder, op: Operand, input: &[usize]) -> (Vec<usize>, bool) {
    match op {
        Operand::Node(n) => (
            b.nodes[n as usize].shape.clone(),
            b.nodes[n as usize].batched,
        ),
        Operand::Input => (input.to_vec(), true),
        Operand::Labels => (vec![], true),
        Operand::Param(p) => (b.params[p].shape.clone(), false),
    }
}

fn conv_signature(weight: &[usize], in_hw: (usize, usize)) -> String {
    format!(
        "conv{}x{}_c{}_{}_{}x{}",
        weight[2], weight[3], weight[1], weight[0], in_hw.0, in_hw.1
    )
}

fn plain_signature(kind: OpKind, shape: &[usize]) -> String {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    if dims.is_empty() {
        kind.name().to_string()
    } else {
        format!("{}_{}", kind.name(), dims.join("x"))
    }
}

struct LayerCtx<'a> {
    index: Option<usize>,
    layer: Option<&'a ResolvedLayer>,
    /// Per-sample input shape of the layer.
    input_shape: &'a [usize],
    fwd_nodes: &'a [NodeId],
    phase: Phase,
    what: String,
}

/// Appends one operator, reading its operands from `env` and writing its
/// output role back.
fn emit(
    b: &mut Builder,
    kind: OpKind,
    ctx: &LayerCtx,
    env: &mut BTreeMap<Role, Operand>,
    raw_input: &[usize],
) -> Result<Option<NodeId>> {
    let id = b.nodes.len() as NodeId;
    let err = |m: String| Error::Translate(format!("{}: {kind}: {m}", ctx.what));
    let mut inputs = Vec::new();
    for &role in kind.reads() {
        let op = if role == Role::Aux {
            let src = kind.aux_source().expect("aux readers name a source");
            ctx.fwd_nodes
                .iter()
                .rev()
                .copied()
                .find(|&n| b.nodes[n as usize].kind == src)
                .map(Operand::Node)
        } else {
            env.get(&role).copied()
        };
        inputs.push(op.ok_or_else(|| err(format!("no {role:?} operand available")))?);
    }
    let shapes: Vec<(Vec<usize>, bool)> = inputs
        .iter()
        .map(|&o| operand_shape(b, o, raw_input))
        .collect();
    let (s0, batched0) = shapes[0].clone();
    let per = |s: &[usize]| numel(s) as u64;
    let conv_layer = || match ctx.layer {
        Some(ResolvedLayer::Conv2D { params, weight }) => Ok((*params, weight.clone())),
        _ => Err(err("needs a Conv2D layer".into())),
    };
    let pool_layer = || match ctx.layer {
        Some(ResolvedLayer::MaxPool(p)) => Ok(*p),
        _ => Err(err("needs a MaxPool layer".into())),
    };
    let hw = |s: &[usize]| -> Result<(usize, usize)> {
        match *s {
            [_, h, w] => Ok((h, w)),
            _ => Err(err(format!("expected [C, H, W], got {s:?}"))),
        }
    };
    // (shape, batched, flops per sample, fixed flops, attrs, signature)
    let (shape, batched, fps, ff, attrs, sig): (Vec<usize>, bool, u64, u64, Attrs, Option<String>) =
        match kind {
            OpKind::Quantize
            | OpKind::Int8Relu
            | OpKind::Normalization
            | OpKind::Round
            | OpKind::Sqrt
            | OpKind::Int8ReluBackward
            | OpKind::SoftmaxCrossEntropy => (s0.clone(), batched0, per(&s0), 0, Attrs::None, None),
            OpKind::Int8Conv => {
                let (params, w) = conv_layer()?;
                let in_hw = hw(&s0)?;
                let (oh, ow) = params.output_hw(in_hw, (w[2], w[3]))?;
                let flops = 2 * (w[1] * w[2] * w[3] * w[0] * oh * ow) as u64;
                (
                    vec![w[0], oh, ow],
                    true,
                    flops,
                    0,
                    Attrs::Conv(params),
                    Some(conv_signature(&w, in_hw)),
                )
            }
            OpKind::Int8MatMul => {
                let w = &shapes[1].0;
                if s0 != [w[0]] {
                    return Err(err(format!("input {s0:?} does not match weight {w:?}")));
                }
                (
                    vec![w[1]],
                    true,
                    2 * (w[0] * w[1]) as u64,
                    0,
                    Attrs::None,
                    None,
                )
            }
            OpKind::ReduceMaxScale => {
                let (fps, ff) = if batched0 {
                    (per(&s0), 0)
                } else {
                    (0, per(&s0))
                };
                (
                    vec![],
                    batched0,
                    fps,
                    ff,
                    Attrs::None,
                    Some(plain_signature(kind, &s0)),
                )
            }
            OpKind::Shift => {
                let (fps, ff) = if batched0 {
                    (per(&s0), 0)
                } else {
                    (0, per(&s0))
                };
                (s0.clone(), batched0, fps, ff, Attrs::None, None)
            }
            OpKind::Int8MaxPool => {
                let p = pool_layer()?;
                let (oh, ow) = p.output_hw(hw(&s0)?)?;
                (vec![s0[0], oh, ow], true, per(&s0), 0, Attrs::Pool(p), None)
            }
            OpKind::Int8MaxPoolBackward => {
                let p = pool_layer()?;
                let out = ctx.input_shape.to_vec();
                let f = per(&out);
                (out, true, f, 0, Attrs::Pool(p), None)
            }
            OpKind::Flatten => {
                let out = vec![numel(&s0)];
                (out.clone(), true, per(&s0), 0, Attrs::Reshape(out), None)
            }
            OpKind::Unflatten => {
                let out = ctx.input_shape.to_vec();
                if numel(&out) != numel(&s0) {
                    return Err(err(format!("cannot reshape {s0:?} to {out:?}")));
                }
                (out.clone(), true, per(&s0), 0, Attrs::Reshape(out), None)
            }
            OpKind::WeightRotate => {
                let w = &s0;
                if w.len() != 4 {
                    return Err(err(format!("expected a 4-D weight, got {w:?}")));
                }
                (
                    vec![w[1], w[0], w[2], w[3]],
                    false,
                    0,
                    per(w),
                    Attrs::None,
                    None,
                )
            }
            OpKind::Transpose => {
                if s0.len() != 2 {
                    return Err(err(format!("expected a 2-D weight, got {s0:?}")));
                }
                (vec![s0[1], s0[0]], false, 0, per(&s0), Attrs::None, None)
            }
            OpKind::Int8Deconv => {
                let (params, w) = conv_layer()?;
                let in_hw = hw(ctx.input_shape)?;
                let e_hw = hw(&s0)?;
                let flops = 2 * (w[1] * w[2] * w[3] * w[0] * e_hw.0 * e_hw.1) as u64;
                (
                    ctx.input_shape.to_vec(),
                    true,
                    flops,
                    0,
                    Attrs::Deconv {
                        params,
                        input_hw: in_hw,
                    },
                    Some(conv_signature(&w, in_hw)),
                )
            }
            OpKind::Int8ConvBackpropFilter => {
                let (params, w) = conv_layer()?;
                let in_hw = hw(&s0)?;
                let e_hw = hw(&shapes[1].0)?;
                let flops = 2 * (w[1] * w[2] * w[3] * w[0] * e_hw.0 * e_hw.1) as u64;
                (
                    w.clone(),
                    false,
                    flops,
                    0,
                    Attrs::Filter {
                        params,
                        kernel_hw: (w[2], w[3]),
                    },
                    Some(conv_signature(&w, in_hw)),
                )
            }
            OpKind::Int8MatMulError => {
                let wt = &shapes[1].0;
                if s0 != [wt[0]] {
                    return Err(err(format!("error {s0:?} does not match weight {wt:?}")));
                }
                (
                    vec![wt[1]],
                    true,
                    2 * (wt[0] * wt[1]) as u64,
                    0,
                    Attrs::None,
                    None,
                )
            }
            OpKind::Int8MatMulBackpropFilter => {
                let e = &shapes[1].0;
                let (i, u) = (numel(&s0), numel(e));
                (vec![i, u], false, 2 * (i * u) as u64, 0, Attrs::None, None)
            }
            OpKind::Int8Update | OpKind::Fp32Update => {
                let Operand::Param(p) = inputs[0] else {
                    return Err(err("updates must read a parameter".into()));
                };
                if shapes[1].0 != s0 || shapes[1].1 {
                    return Err(err(format!(
                        "gradient shape {:?} does not match weight {s0:?}",
                        shapes[1].0
                    )));
                }
                (
                    s0.clone(),
                    false,
                    0,
                    per(&s0),
                    Attrs::Update { param: p },
                    None,
                )
            }
        };
    if kind == OpKind::SoftmaxCrossEntropy && shape.len() != 1 {
        return Err(err(format!("logits must be flat, got {shape:?}")));
    }
    let signature = sig.unwrap_or_else(|| plain_signature(kind, &shape));
    b.nodes.push(Node {
        id,
        kind,
        layer: ctx.index,
        phase: ctx.phase,
        inputs,
        attrs,
        shape,
        batched,
        flops_per_sample: fps,
        flops_fixed: ff,
        signature,
        dsp_supported: kind.dsp_supported(),
        splittable: kind.splittable(),
    });
    if let Some(role) = kind.writes() {
        env.insert(role, Operand::Node(id));
    }
    Ok(Some(id))
}

/// Runs a chain and returns the node now holding `Role::Value`.
fn run_chain(
    b: &mut Builder,
    chain: &[OpKind],
    ctx: &LayerCtx,
    env: &mut BTreeMap<Role, Operand>,
    raw_input: &[usize],
) -> Result<(Operand, Vec<NodeId>)> {
    let start = env.get(&Role::Value).copied();
    let mut emitted = Vec::new();
    for &k in chain {
        if k.is_update() {
            return Err(Error::Translate(format!(
                "{}: update operators are added automatically",
                ctx.what
            )));
        }
        if let Some(id) = emit(b, k, ctx, env, raw_input)? {
            emitted.push(id);
        }
    }
    let value = env[&Role::Value];
    // An accumulator left unshifted would leak INT32 into the next layer.
    if let Some(Operand::Node(acc)) = env.get(&Role::Accum) {
        let consumed = emitted
            .iter()
            .any(|&n| b.nodes[n as usize].inputs.contains(&Operand::Node(*acc)));
        if emitted.contains(acc) && !consumed {
            return Err(Error::Translate(format!(
                "{}: chain ends with an unscaled INT32 accumulator",
                ctx.what
            )));
        }
    }
    if !chain.is_empty()
        && Some(value) == start
        && chain.iter().any(|k| k.writes() == Some(Role::Accum))
    {
        return Err(Error::Translate(format!(
            "{}: chain never produces an INT8 output",
            ctx.what
        )));
    }
    Ok((value, emitted))
}

fn fans(layer: &ResolvedLayer) -> (usize, usize) {
    match layer {
        ResolvedLayer::Conv2D { weight, .. } => {
            let k = weight[2] * weight[3];
            (weight[1] * k, weight[0] * k)
        }
        ResolvedLayer::Dense { weight } => (weight[0], weight[1]),
        _ => (0, 0),
    }
}

/// Translates an FP32 model into a mixed-precision training graph.
pub fn translate(model: &ModelSpec, cfg: &TrainingConfig) -> Result<TrainGraph> {
    if model.layers.is_empty() {
        return Err(Error::Translate("model has no layers".into()));
    }
    let layers = model.resolve()?;
    let mut params = Vec::new();
    for (i, (l, _)) in layers.iter().enumerate() {
        if let Some(shape) = l.weight_shape() {
            params.push(ParamSpec {
                id: params.len(),
                layer: i,
                name: format!("{}{}.weight", model.layers[i].op.to_lowercase(), i),
                shape: shape.to_vec(),
                fans: fans(l),
            });
        }
    }
    let param_of: BTreeMap<usize, usize> = params.iter().map(|p| (p.layer, p.id)).collect();
    let mut b = Builder {
        nodes: Vec::new(),
        params: &params,
    };
    let raw = model.input.clone();
    let mut env = BTreeMap::from([(Role::Raw, Operand::Input)]);
    let q = emit(
        &mut b,
        OpKind::Quantize,
        &LayerCtx {
            index: None,
            layer: None,
            input_shape: &raw,
            fwd_nodes: &[],
            phase: Phase::Fwd,
            what: "input".into(),
        },
        &mut env,
        &raw,
    )?
    .expect("quantize emits");
    let mut cur = Operand::Node(q);
    let mut layer_inputs = Vec::new();
    let mut input_shapes = Vec::new();
    let mut fwd_nodes: Vec<Vec<NodeId>> = Vec::new();
    let mut shape = raw.clone();
    for (i, (layer, out_shape)) in layers.iter().enumerate() {
        let op = &model.layers[i].op;
        let chain = cfg.translation.get(op).ok_or_else(|| {
            Error::Translate(format!(
                "layer {i}: `{op}` has no translation in `{}`",
                cfg.name
            ))
        })?;
        let mut env = BTreeMap::from([(Role::Value, cur)]);
        if let Some(&p) = param_of.get(&i) {
            env.insert(Role::Weight, Operand::Param(p));
        }
        let ctx = LayerCtx {
            index: Some(i),
            layer: Some(layer),
            input_shape: &shape,
            fwd_nodes: &[],
            phase: Phase::Fwd,
            what: format!("layer {i} ({op}) forward"),
        };
        let (value, emitted) = run_chain(&mut b, chain, &ctx, &mut env, &raw)?;
        if let Operand::Node(v) = value {
            if b.nodes[v as usize].shape != *out_shape {
                return Err(Error::Translate(format!(
                    "layer {i} ({op}): chain yields {:?}, layer expects {out_shape:?}",
                    b.nodes[v as usize].shape
                )));
            }
        }
        layer_inputs.push(cur);
        input_shapes.push(shape.clone());
        fwd_nodes.push(emitted);
        cur = value;
        shape = out_shape.clone();
    }
    if shape != [model.classes] {
        return Err(Error::Translate(format!(
            "model output {shape:?} does not match {} classes",
            model.classes
        )));
    }
    let mut env = BTreeMap::from([(Role::Value, cur), (Role::Labels, Operand::Labels)]);
    let loss = emit(
        &mut b,
        OpKind::SoftmaxCrossEntropy,
        &LayerCtx {
            index: None,
            layer: None,
            input_shape: &shape,
            fwd_nodes: &[],
            phase: Phase::Fwd,
            what: "loss".into(),
        },
        &mut env,
        &raw,
    )?
    .expect("loss emits");
    let update_kind = match cfg.weight.update {
        NumericType::Int8 => OpKind::Int8Update,
        NumericType::Fp32 => OpKind::Fp32Update,
    };
    let mut err = Operand::Node(loss);
    for (i, (layer, _)) in layers.iter().enumerate().rev() {
        let op = &model.layers[i].op;
        let rule = cfg.backprop.get(op).ok_or_else(|| {
            Error::Translate(format!(
                "layer {i}: `{op}` has no backprop rule in `{}`",
                cfg.name
            ))
        })?;
        let base = |phase: Phase, what: &str| LayerCtx {
            index: Some(i),
            layer: Some(layer),
            input_shape: &input_shapes[i],
            fwd_nodes: &fwd_nodes[i],
            phase,
            what: format!("layer {i} ({op}) {what}"),
        };
        let mut env = BTreeMap::from([
            (Role::Value, err),
            (Role::Error, err),
            (Role::LayerInput, layer_inputs[i]),
        ]);
        let param = param_of.get(&i).copied();
        if let Some(p) = param {
            env.insert(Role::Weight, Operand::Param(p));
        }
        let next_err = if i > 0 {
            if rule.error.is_empty() && layer.weight_shape().is_some() {
                return Err(Error::Translate(format!(
                    "layer {i} ({op}): weighted layers need an error chain"
                )));
            }
            let (v, _) = run_chain(
                &mut b,
                &rule.error,
                &base(Phase::Bwd, "error"),
                &mut env.clone(),
                &raw,
            )?;
            Some(v)
        } else {
            None
        };
        match (param, rule.weight.is_empty()) {
            (Some(p), false) => {
                let (g, _) = run_chain(
                    &mut b,
                    &rule.weight,
                    &base(Phase::Bwd, "weight"),
                    &mut env,
                    &raw,
                )?;
                let mut uenv =
                    BTreeMap::from([(Role::Weight, Operand::Param(p)), (Role::Value, g)]);
                emit(
                    &mut b,
                    update_kind,
                    &base(Phase::Update, "update"),
                    &mut uenv,
                    &raw,
                )?;
            }
            (Some(_), true) => {
                return Err(Error::Translate(format!(
                    "layer {i} ({op}): trainable weight has no weight-gradient chain"
                )))
            }
            (None, false) => {
                return Err(Error::Translate(format!(
                    "layer {i} ({op}): weight-gradient chain on a weightless layer"
                )))
            }
            (None, true) => {}
        }
        if let Some(e) = next_err {
            err = e;
        }
    }
    let g = TrainGraph {
        name: model.name.clone(),
        algorithm: cfg.name.clone(),
        input_shape: model.input.clone(),
        classes: model.classes,
        params: params.clone(),
        nodes: b.nodes,
        loss,
        weight_type: cfg.weight.ty,
        update: cfg.weight.update,
        initializer: cfg.weight.initializer,
        lr_shift: cfg.optimizer.lr_shift.unwrap_or(0),
        lr: cfg.optimizer.lr.unwrap_or(0.0),
        rescale: cfg.optimizer.rescale,
    };
    g.validate()?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::translator::config::niti;
    use crate::translator::model::{mlp, toy_cnn, LayerSpec};
    use proptest::prelude::*;

    #[test]
    fn conv_pool_dense_structure() {
        let m = ModelSpec {
            name: "t".into(),
            input: vec![1, 6, 6],
            classes: 3,
            layers: vec![
                LayerSpec::conv(2, 3, 1, 1),
                LayerSpec::maxpool(2, 2),
                LayerSpec::new("Flatten"),
                LayerSpec::dense(3),
            ],
        };
        let g = translate(&m, &niti()).unwrap();
        assert_eq!(g.count(OpKind::Int8Conv), 1);
        assert_eq!(g.count(OpKind::Int8MaxPool), 1);
        assert_eq!(g.count(OpKind::Int8MatMul), 1);
        // the first layer needs no input error
        assert_eq!(g.count(OpKind::Int8Deconv), 0);
        assert_eq!(g.count(OpKind::Int8ConvBackpropFilter), 1);
        assert_eq!(g.count(OpKind::Int8MatMulError), 1);
        assert_eq!(g.count(OpKind::Int8Update), 2);
        assert_eq!(g.count(OpKind::SoftmaxCrossEntropy), 1);
    }

    #[test]
    fn deconv_emitted_for_inner_convs() {
        let g = translate(&toy_cnn(), &niti()).unwrap();
        assert_eq!(g.count(OpKind::Int8Deconv), 1);
        assert_eq!(g.count(OpKind::WeightRotate), 1);
        assert_eq!(g.count(OpKind::Int8ConvBackpropFilter), 2);
        let sigs: Vec<&str> = g
            .nodes
            .iter()
            .filter(|n| n.kind == OpKind::Int8Conv)
            .map(|n| n.signature.as_str())
            .collect();
        assert_eq!(sigs, vec!["conv3x3_c1_8_8x8", "conv3x3_c8_16_8x8"]);
    }

    #[test]
    fn empty_model_rejected() {
        let mut m = toy_cnn();
        m.layers.clear();
        assert!(matches!(translate(&m, &niti()), Err(Error::Translate(_))));
    }

    #[test]
    fn untranslated_op_rejected() {
        let mut cfg = niti();
        cfg.translation.remove("MaxPool");
        assert!(matches!(
            translate(&toy_cnn(), &cfg),
            Err(Error::Translate(_))
        ));
    }

    #[test]
    fn chain_without_shift_rejected() {
        let mut cfg = niti();
        cfg.translation
            .insert("Dense".into(), vec![OpKind::Int8MatMul]);
        assert!(matches!(
            translate(&mlp(4, 8, 2), &cfg),
            Err(Error::Translate(_))
        ));
    }

    #[test]
    fn weights_have_one_gradient_and_update() {
        let g = translate(&toy_cnn(), &niti()).unwrap();
        assert_eq!(g.params.len(), 3);
        g.validate().unwrap();
    }

    fn arb_model() -> impl Strategy<Value = ModelSpec> {
        (
            1usize..3,
            4usize..10,
            prop::collection::vec((0u8..4, 1usize..5), 0..5),
            prop::collection::vec(1usize..12, 0..3),
            2usize..6,
        )
            .prop_map(|(c, hw, convs, dense, classes)| {
                let mut layers = Vec::new();
                let mut size = hw;
                for (kind, ch) in convs {
                    match kind {
                        0 => layers.push(LayerSpec::conv(ch, 3, 1, 1)),
                        1 if size >= 2 => {
                            layers.push(LayerSpec::maxpool(2, 2));
                            size /= 2;
                        }
                        _ => layers.push(LayerSpec::new("ReLU")),
                    }
                }
                layers.push(LayerSpec::new("Flatten"));
                for u in dense {
                    layers.push(LayerSpec::dense(u));
                    layers.push(LayerSpec::new("ReLU"));
                }
                layers.push(LayerSpec::dense(classes));
                ModelSpec {
                    name: "r".into(),
                    input: vec![c, hw, hw],
                    classes,
                    layers,
                }
            })
    }

    proptest! {
        #[test]
        fn random_models_translate_to_dags(m in arb_model()) {
            let g = translate(&m, &niti()).unwrap();
            let order = topo_order(&g.dag()).unwrap();
            prop_assert_eq!(order.len(), g.nodes.len());
            prop_assert_eq!(g.count(OpKind::Int8Update), g.params.len());
        }
    }
}
