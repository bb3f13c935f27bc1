//! Mixed-precision training abstraction.
//!
//! A training config names, per FP32 operator, the chain of mixed-precision
//! operators that replaces it in the forward pass, the chains that compute
//! its error and weight gradients, the weight type and update rule, and the
//! optimizer. `translate` applies a config to a model description and emits
//! the whole training graph, which can be stored as an intermediate model.

pub mod config;
mod format;
mod graph;
pub mod model;
pub mod registry;

pub use config::{fp32_update, niti, parse_config, NumericType, TrainingConfig};
pub use format::{load_intermediate, serialize_intermediate, FORMAT_VERSION, MAGIC};
pub use graph::{translate, Attrs, Node, NodeId, Operand, ParamSpec, Phase, TrainGraph};
pub use model::{mlp, toy_cnn, vgg_like, LayerSpec, ModelSpec, ResolvedLayer};
pub use registry::OpKind;
