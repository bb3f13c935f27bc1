//! Trainable parameters: INT8 weights and optional FP32 masters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::backend::ParamUpdate;
use crate::error::{Error, Result};
use crate::qtensor::{numel, quantize, FloatTensor, QuantTensor};
use crate::translator::config::Initializer;
use crate::translator::{NumericType, ParamSpec, TrainGraph};

/// Xavier-initialized FP32 values for every parameter, drawn in order from one
/// seeded stream.
pub fn init_float(params: &[ParamSpec], init: Initializer, seed: u64) -> Result<Vec<FloatTensor>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    params
        .iter()
        .map(|p| {
            let (fan_in, fan_out) = p.fans;
            let fans = (fan_in + fan_out).max(1) as f32;
            let n = numel(&p.shape);
            let data: Vec<f32> = match init {
                Initializer::XavierNormal => {
                    let d = Normal::new(0.0, (2.0 / fans).sqrt())
                        .map_err(|e| Error::Internal(e.to_string()))?;
                    (0..n).map(|_| d.sample(&mut rng)).collect()
                }
                Initializer::XavierUniform => {
                    let a = (6.0 / fans).sqrt();
                    let d = Uniform::new_inclusive(-a, a)
                        .map_err(|e| Error::Internal(e.to_string()))?;
                    (0..n).map(|_| d.sample(&mut rng)).collect()
                }
            };
            FloatTensor::new(data, p.shape.clone())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    pub weights: Vec<QuantTensor>,
    /// Present when the graph updates in FP32.
    pub masters: Option<Vec<FloatTensor>>,
}

impl ParamStore {
    pub fn init(graph: &TrainGraph, seed: u64) -> Result<Self> {
        let floats = init_float(&graph.params, graph.initializer, seed)?;
        Self::from_float(graph, floats)
    }

    pub fn from_float(graph: &TrainGraph, floats: Vec<FloatTensor>) -> Result<Self> {
        let weights = floats.iter().map(quantize).collect::<Result<Vec<_>>>()?;
        let masters = (graph.update == NumericType::Fp32).then_some(floats);
        Ok(Self { weights, masters })
    }

    pub fn apply(&mut self, updates: impl IntoIterator<Item = (usize, ParamUpdate)>) -> Result<()> {
        for (p, u) in updates {
            let slot = self
                .weights
                .get_mut(p)
                .ok_or_else(|| Error::Run(format!("update for unknown parameter {p}")))?;
            match u {
                ParamUpdate::Int8(q) => *slot = q,
                ParamUpdate::Fp32 { master, quant } => {
                    *slot = quant;
                    let masters = self
                        .masters
                        .as_mut()
                        .ok_or_else(|| Error::Run("FP32 update without masters".into()))?;
                    masters[p] = master;
                }
            }
        }
        Ok(())
    }
}
