use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// What an operator reads from, or writes to, the wiring environment of the
/// chain it appears in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    /// The value flowing through the chain: the activation in a forward
    /// chain, the error in an error chain, the gradient in a weight chain.
    Value,
    /// The layer's forward input activation.
    LayerInput,
    /// The error arriving at the layer from above.
    Error,
    Weight,
    /// A relaid-out weight (rotated or transposed).
    WeightAlt,
    Accum,
    Scale,
    /// The layer's forward node of the paired kind (argmax, mask).
    Aux,
    Labels,
    Raw,
}

/// Every mixed-precision operator the runtime can execute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    Quantize,
    Int8Conv,
    Int8MatMul,
    ReduceMaxScale,
    Shift,
    Int8MaxPool,
    Int8Relu,
    Flatten,
    SoftmaxCrossEntropy,
    Int8ReluBackward,
    Int8MaxPoolBackward,
    Unflatten,
    WeightRotate,
    Transpose,
    Int8Deconv,
    Int8ConvBackpropFilter,
    Int8MatMulError,
    Int8MatMulBackpropFilter,
    Int8Update,
    Fp32Update,
    Normalization,
    Round,
    Sqrt,
}

pub const ALL_OPS: [OpKind; 23] = [
    OpKind::Quantize,
    OpKind::Int8Conv,
    OpKind::Int8MatMul,
    OpKind::ReduceMaxScale,
    OpKind::Shift,
    OpKind::Int8MaxPool,
    OpKind::Int8Relu,
    OpKind::Flatten,
    OpKind::SoftmaxCrossEntropy,
    OpKind::Int8ReluBackward,
    OpKind::Int8MaxPoolBackward,
    OpKind::Unflatten,
    OpKind::WeightRotate,
    OpKind::Transpose,
    OpKind::Int8Deconv,
    OpKind::Int8ConvBackpropFilter,
    OpKind::Int8MatMulError,
    OpKind::Int8MatMulBackpropFilter,
    OpKind::Int8Update,
    OpKind::Fp32Update,
    OpKind::Normalization,
    OpKind::Round,
    OpKind::Sqrt,
];

/// How an operator's cost scales: arithmetic-bound or data-movement-bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostClass {
    Compute,
    Memory,
    Float,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        use OpKind::*;
        match self {
            Quantize => "Quantize",
            Int8Conv => "Int8Conv",
            Int8MatMul => "Int8MatMul",
            ReduceMaxScale => "ReduceMaxScale",
            Shift => "Shift",
            Int8MaxPool => "Int8MaxPool",
            Int8Relu => "Int8Relu",
            Flatten => "Flatten",
            SoftmaxCrossEntropy => "SoftmaxCrossEntropy",
            Int8ReluBackward => "Int8ReluBackward",
            Int8MaxPoolBackward => "Int8MaxPoolBackward",
            Unflatten => "Unflatten",
            WeightRotate => "WeightRotate",
            Transpose => "Transpose",
            Int8Deconv => "Int8Deconv",
            Int8ConvBackpropFilter => "Int8ConvBackpropFilter",
            Int8MatMulError => "Int8MatMulError",
            Int8MatMulBackpropFilter => "Int8MatMulBackpropFilter",
            Int8Update => "Int8Update",
            Fp32Update => "Fp32Update",
            Normalization => "Normalization",
            Round => "Round",
            Sqrt => "Sqrt",
        }
    }

    /// Roles read, in argument order.
    pub fn reads(self) -> &'static [Role] {
        use OpKind::*;
        use Role::*;
        match self {
            Quantize => &[Raw],
            Int8Conv | Int8MatMul => &[Value, Weight],
            ReduceMaxScale => &[Accum],
            Shift => &[Accum, Scale],
            Int8MaxPool | Int8Relu | Flatten | Unflatten | Normalization | Round | Sqrt => &[Value],
            SoftmaxCrossEntropy => &[Value, Labels],
            Int8ReluBackward | Int8MaxPoolBackward => &[Value, Aux],
            WeightRotate | Transpose => &[Weight],
            Int8Deconv | Int8MatMulError => &[Value, WeightAlt],
            Int8ConvBackpropFilter | Int8MatMulBackpropFilter => &[LayerInput, Error],
            Int8Update | Fp32Update => &[Weight, Value],
        }
    }

    /// Role written; `None` for updates, which write parameters.
    pub fn writes(self) -> Option<Role> {
        use OpKind::*;
        match self {
            Int8Conv
            | Int8MatMul
            | Int8Deconv
            | Int8ConvBackpropFilter
            | Int8MatMulError
            | Int8MatMulBackpropFilter => Some(Role::Accum),
            ReduceMaxScale => Some(Role::Scale),
            WeightRotate | Transpose => Some(Role::WeightAlt),
            SoftmaxCrossEntropy => Some(Role::Error),
            Int8Update | Fp32Update => None,
            _ => Some(Role::Value),
        }
    }

    /// The forward kind whose node backs `Role::Aux`.
    pub fn aux_source(self) -> Option<OpKind> {
        match self {
            OpKind::Int8ReluBackward => Some(OpKind::Int8Relu),
            OpKind::Int8MaxPoolBackward => Some(OpKind::Int8MaxPool),
            _ => None,
        }
    }

    /// FP32-only operators lack accelerator support.
    pub fn dsp_supported(self) -> bool {
        !matches!(
            self,
            OpKind::Quantize
                | OpKind::SoftmaxCrossEntropy
                | OpKind::Fp32Update
                | OpKind::Normalization
                | OpKind::Round
                | OpKind::Sqrt
        )
    }

    /// Operators that may run as independent micro-batches.
    pub fn splittable(self) -> bool {
        matches!(
            self,
            OpKind::Int8Conv
                | OpKind::Int8MatMul
                | OpKind::Int8Deconv
                | OpKind::Int8MatMulError
                | OpKind::Int8ConvBackpropFilter
                | OpKind::Int8MatMulBackpropFilter
        )
    }

    /// Splitting this operator changes numerics: the batch is reduced over.
    pub fn reduces_batch(self) -> bool {
        matches!(
            self,
            OpKind::Int8ConvBackpropFilter | OpKind::Int8MatMulBackpropFilter
        )
    }

    pub fn is_update(self) -> bool {
        matches!(self, OpKind::Int8Update | OpKind::Fp32Update)
    }

    pub fn cost_class(self) -> CostClass {
        use OpKind::*;
        match self {
            Int8Conv
            | Int8MatMul
            | Int8Deconv
            | Int8ConvBackpropFilter
            | Int8MatMulError
            | Int8MatMulBackpropFilter => CostClass::Compute,
            Quantize | SoftmaxCrossEntropy | Fp32Update | Normalization | Round | Sqrt => {
                CostClass::Float
            }
            _ => CostClass::Memory,
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ALL_OPS
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown operator `{s}`"))
    }
}
