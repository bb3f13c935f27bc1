//! Execution backends.
//!
//! A backend runs the operators of one compute subgraph and reports the time
//! the subgraph would take on its processor. Numerics are identical on both
//! backends; only the latency model and the supported operator set differ.

mod cost;
mod exec;

pub use cost::{AnalyticRates, CostModel, CostRow, SEEDED_CSV};
pub use exec::{run_node, ExecContext, ParamUpdate, PerBatchRescale, ScalePolicy, Value};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scheduler::{Processor, Subgraph};
use crate::translator::{NodeId, OpKind, TrainGraph};

#[derive(Clone, Debug, PartialEq)]
pub struct BackendDescriptor {
    pub name: String,
    pub processor: Processor,
    /// Launch overhead charged once per non-empty subgraph.
    pub fixed_overhead_ms: f64,
}

impl BackendDescriptor {
    pub fn host() -> Self {
        Self {
            name: "host".into(),
            processor: Processor::Cpu,
            fixed_overhead_ms: 0.0,
        }
    }

    /// Simulated accelerator: INT8 ops only, timed by the cost model.
    pub fn sim_dsp() -> Self {
        Self {
            name: "sim-dsp".into(),
            processor: Processor::Dsp,
            fixed_overhead_ms: 0.0,
        }
    }

    pub fn for_processor(p: Processor) -> Self {
        match p {
            Processor::Cpu => Self::host(),
            Processor::Dsp => Self::sim_dsp(),
        }
    }

    pub fn supports(&self, kind: OpKind) -> bool {
        self.processor == Processor::Cpu || kind.dsp_supported()
    }
}

/// Per-node `(cpu, dsp)` latency in ms for one batch size.
pub type LatencyMap = BTreeMap<NodeId, (f64, f64)>;

pub fn latency_map(graph: &TrainGraph, cost: &CostModel, batch: usize) -> LatencyMap {
    graph
        .nodes
        .iter()
        .map(|n| (n.id, cost.node_latency(n, batch)))
        .collect()
}

/// Runs every op of `sg` in order. Returns the modelled elapsed time: the sum
/// of op latencies on the subgraph's processor plus the backend overhead.
/// Rescale sites that reused a cached exponent cost nothing.
pub fn execute_subgraph(
    backend: &BackendDescriptor,
    sg: &Subgraph,
    ctx: &mut ExecContext,
    latencies: &LatencyMap,
) -> Result<f64> {
    if sg.ops.is_empty() {
        return Ok(0.0);
    }
    if sg.processor != backend.processor {
        return Err(Error::Backend(format!(
            "subgraph {} is placed on {} but backend `{}` runs {}",
            sg.id, sg.processor, backend.name, backend.processor
        )));
    }
    let mut elapsed = backend.fixed_overhead_ms;
    for &op in &sg.ops {
        let graph = ctx.graph;
        let node = graph
            .nodes
            .get(op as usize)
            .ok_or_else(|| Error::Backend(format!("subgraph {} names unknown node {op}", sg.id)))?;
        if !backend.supports(node.kind) {
            return Err(Error::Backend(format!(
                "backend `{}` cannot run {} (node {op})",
                backend.name, node.kind
            )));
        }
        let before = ctx.recomputed.len();
        run_node(node, ctx)?;
        let skipped = node.kind == OpKind::ReduceMaxScale && ctx.recomputed.len() == before;
        if !skipped {
            let (cpu, dsp) = latencies.get(&op).copied().unwrap_or((0.0, 0.0));
            elapsed += match backend.processor {
                Processor::Cpu => cpu,
                Processor::Dsp => dsp,
            };
        }
    }
    Ok(elapsed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batchsplit::SplitPlan;
    use crate::kernels::int8_conv2d;
    use crate::qtensor::{compute_scale_exponent, downscale, quantize, FloatTensor, QuantTensor};
    use crate::translator::{niti, toy_cnn, translate, Attrs};

    fn toy_inputs(batch: usize) -> (FloatTensor, Vec<usize>) {
        let data = (0..batch * 64)
            .map(|i| ((i * 37 % 101) as f32 / 50.0) - 1.0)
            .collect();
        let labels = (0..batch).map(|i| i % 10).collect();
        (
            FloatTensor::new(data, vec![batch, 1, 8, 8]).unwrap(),
            labels,
        )
    }

    fn toy_weights(g: &TrainGraph) -> Vec<QuantTensor> {
        g.params
            .iter()
            .map(|p| {
                let n: usize = p.shape.iter().product();
                let data = (0..n).map(|i| ((i * 13 % 31) as i8) - 15).collect();
                QuantTensor::new(data, p.shape.clone(), -6).unwrap()
            })
            .collect()
    }

    fn run_all(
        g: &TrainGraph,
        batch: usize,
        splits: &BTreeMap<NodeId, SplitPlan>,
    ) -> BTreeMap<usize, ParamUpdate> {
        let (x, labels) = toy_inputs(batch);
        let w = toy_weights(g);
        let mut scales = PerBatchRescale;
        let mut ctx = ExecContext {
            graph: g,
            input: &x,
            labels: &labels,
            weights: &w,
            masters: None,
            splits,
            scales: &mut scales,
            values: BTreeMap::new(),
            updates: BTreeMap::new(),
            recomputed: Vec::new(),
        };
        for n in &g.nodes {
            run_node(n, &mut ctx).unwrap();
        }
        ctx.updates
    }

    fn int8(u: &ParamUpdate) -> &QuantTensor {
        match u {
            ParamUpdate::Int8(q) => q,
            _ => panic!("expected an INT8 update"),
        }
    }

    #[test]
    fn full_step_updates_every_param() {
        let g = translate(&toy_cnn(), &niti()).unwrap();
        let ups = run_all(&g, 4, &BTreeMap::new());
        assert_eq!(ups.len(), g.params.len());
        for (p, u) in &ups {
            assert_eq!(int8(u).shape(), g.params[*p].shape.as_slice());
        }
    }

    #[test]
    fn split_step_is_bit_exact() {
        let g = translate(&toy_cnn(), &niti()).unwrap();
        let base = run_all(&g, 6, &BTreeMap::new());
        let splits: BTreeMap<NodeId, SplitPlan> = g
            .nodes
            .iter()
            .filter(|n| n.splittable)
            .map(|n| {
                (
                    n.id,
                    SplitPlan {
                        op_signature: n.signature.clone(),
                        batch: 6,
                        micro_batch: 4,
                        num_micro: 2,
                    },
                )
            })
            .collect();
        assert!(!splits.is_empty());
        let split = run_all(&g, 6, &splits);
        for (p, u) in &base {
            assert_eq!(int8(u), int8(&split[p]), "param {p}");
        }
    }

    #[test]
    fn conv_chain_matches_direct_kernels() {
        let g = translate(&toy_cnn(), &niti()).unwrap();
        let (x, labels) = toy_inputs(2);
        let w = toy_weights(&g);
        let mut scales = PerBatchRescale;
        let splits = BTreeMap::new();
        let mut ctx = ExecContext {
            graph: &g,
            input: &x,
            labels: &labels,
            weights: &w,
            masters: None,
            splits: &splits,
            scales: &mut scales,
            values: BTreeMap::new(),
            updates: BTreeMap::new(),
            recomputed: Vec::new(),
        };
        for n in g.nodes.iter().take(4) {
            run_node(n, &mut ctx).unwrap();
        }
        let Attrs::Conv(p) = g.nodes[1].attrs else {
            panic!()
        };
        let acc = int8_conv2d(&quantize(&x).unwrap(), &w[0], p).unwrap();
        let expect = downscale(&acc, compute_scale_exponent(&acc)).unwrap();
        assert_eq!(ctx.value(3).unwrap().quant().unwrap(), &expect);
    }

    #[test]
    fn sim_dsp_rejects_fp32_ops() {
        let g = translate(&toy_cnn(), &niti()).unwrap();
        let (x, labels) = toy_inputs(1);
        let w = toy_weights(&g);
        let mut scales = PerBatchRescale;
        let splits = BTreeMap::new();
        let mut ctx = ExecContext {
            graph: &g,
            input: &x,
            labels: &labels,
            weights: &w,
            masters: None,
            splits: &splits,
            scales: &mut scales,
            values: BTreeMap::new(),
            updates: BTreeMap::new(),
            recomputed: Vec::new(),
        };
        let sg = Subgraph {
            id: 0,
            processor: Processor::Dsp,
            ops: vec![0],
        };
        let lat = latency_map(&g, &CostModel::seeded(), 1);
        let err = execute_subgraph(&BackendDescriptor::sim_dsp(), &sg, &mut ctx, &lat);
        assert!(matches!(err, Err(Error::Backend(_))));
        let empty = Subgraph {
            id: 1,
            processor: Processor::Dsp,
            ops: vec![],
        };
        let t = execute_subgraph(&BackendDescriptor::sim_dsp(), &empty, &mut ctx, &lat).unwrap();
        assert_eq!(t, 0.0);
    }

    #[test]
    fn host_elapsed_is_sum_of_latencies() {
        let g = translate(&toy_cnn(), &niti()).unwrap();
        let (x, labels) = toy_inputs(2);
        let w = toy_weights(&g);
        let mut scales = PerBatchRescale;
        let splits = BTreeMap::new();
        let mut ctx = ExecContext {
            graph: &g,
            input: &x,
            labels: &labels,
            weights: &w,
            masters: None,
            splits: &splits,
            scales: &mut scales,
            values: BTreeMap::new(),
            updates: BTreeMap::new(),
            recomputed: Vec::new(),
        };
        let sg = Subgraph {
            id: 0,
            processor: Processor::Cpu,
            ops: (0..4).collect(),
        };
        let lat = latency_map(&g, &CostModel::seeded(), 2);
        let t = execute_subgraph(&BackendDescriptor::host(), &sg, &mut ctx, &lat).unwrap();
        let expect: f64 = (0..4).map(|i| lat[&i].0).sum();
        assert!((t - expect).abs() < 1e-12);
    }
}
