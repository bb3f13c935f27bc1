//! Execution stage: the training loop over planned subgraphs.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::backend::{
    execute_subgraph, run_node, BackendDescriptor, ExecContext, PerBatchRescale, ScalePolicy, Value,
};
use crate::error::{Error, Result};
use crate::memplan::{prepare_catalog, BudgetState, ReleaseCatalog, SubgraphCache};
use crate::qtensor::{dequantize, FloatTensor};
use crate::rescale::{RescaleState, RescaleTrace, TraceRow};
use crate::translator::{NodeId, OpKind, Operand, Phase, TrainGraph};

use super::data::Dataset;
use super::params::ParamStore;
use super::plan::{ExecutionPlan, Technique};

/// Per-site self-adaptive rescaling; with the technique off every site
/// recomputes every batch.
#[derive(Clone, Debug)]
pub struct AdaptiveRescale {
    pub enabled: bool,
    pub batch: u64,
    pub states: BTreeMap<NodeId, RescaleState>,
    pub trace: Option<RescaleTrace>,
}

impl AdaptiveRescale {
    pub fn new(graph: &TrainGraph, enabled: bool) -> Self {
        let states = graph
            .nodes
            .iter()
            .filter(|n| n.kind == OpKind::ReduceMaxScale)
            .map(|n| {
                let site = match n.phase {
                    Phase::Fwd => format!("fwd{}", n.id),
                    _ => format!("bwd{}", n.id),
                };
                (
                    n.id,
                    RescaleState::new(n.layer.unwrap_or(0), site, graph.rescale),
                )
            })
            .collect();
        Self {
            enabled,
            batch: 0,
            states,
            trace: None,
        }
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(RescaleTrace::default());
        self
    }
}

impl ScalePolicy for AdaptiveRescale {
    fn exponent(&mut self, node: NodeId, fresh: &mut dyn FnMut() -> u32) -> (u32, bool) {
        let batch = self.batch;
        let Some(st) = self.states.get_mut(&node) else {
            return (fresh(), true);
        };
        let (e, recomputed) = if self.enabled {
            st.step(batch, fresh)
        } else {
            let e = fresh();
            st.observe(e, batch);
            (e, true)
        };
        if let Some(t) = self.trace.as_mut() {
            t.push(TraceRow {
                batch,
                layer: st.layer,
                site: st.site.clone(),
                recompute: recomputed,
                exponent: e,
            });
        }
        (e, recomputed)
    }
}

/// What a built subgraph holds between batches: its operator list and the
/// bytes of the buffers bound to it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BuiltSubgraph {
    pub ops: Vec<NodeId>,
    pub buffer_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepMetrics {
    pub batch: u64,
    pub epoch: u64,
    pub loss: f32,
    pub train_acc: f64,
    pub sim_ms: f64,
    pub recomputes: usize,
    pub builds: u64,
    pub releases: u64,
}

struct Budget {
    catalog: ReleaseCatalog,
    state: BudgetState,
}

pub struct Trainer {
    pub graph: TrainGraph,
    pub plan: ExecutionPlan,
    pub params: ParamStore,
    pub rescale: AdaptiveRescale,
    cache: SubgraphCache<BuiltSubgraph>,
    budget: Option<Budget>,
    pub batches_done: u64,
}

fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

fn accuracy(logits: &FloatTensor, labels: &[usize]) -> f64 {
    let classes = logits.shape()[1];
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| argmax(&logits.data()[i * classes..(i + 1) * classes]) == l)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

impl Trainer {
    pub fn new(
        graph: TrainGraph,
        plan: ExecutionPlan,
        params: ParamStore,
        budget_bytes: Option<u64>,
    ) -> Result<Self> {
        let tech = &plan.options.techniques;
        let rescale = AdaptiveRescale::new(&graph, tech.on(Technique::Rescale));
        let cache = SubgraphCache::new(tech.on(Technique::Reuse));
        let budget = match budget_bytes {
            Some(b) => {
                let catalog = prepare_catalog(&plan.region_sizes(&graph), b)?;
                let state = BudgetState::new(&catalog);
                Some(Budget { catalog, state })
            }
            None => None,
        };
        Ok(Self {
            graph,
            plan,
            params,
            rescale,
            cache,
            budget,
            batches_done: 0,
        })
    }

    pub fn builds(&self) -> u64 {
        self.cache.builds()
    }

    pub fn releases(&self) -> u64 {
        self.budget.as_ref().map_or(0, |b| b.state.deallocations())
    }

    pub fn budget_state(&self) -> Option<&BudgetState> {
        self.budget.as_ref().map(|b| &b.state)
    }

    fn check_inputs(&self, x: &FloatTensor, labels: &[usize]) -> Result<()> {
        if x.shape()[1..] != self.graph.input_shape[..] {
            return Err(Error::Run(format!(
                "sample shape {:?} does not match model input {:?}",
                &x.shape()[1..],
                self.graph.input_shape
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= self.graph.classes) {
            return Err(Error::Run(format!(
                "label {l} out of range for {} classes",
                self.graph.classes
            )));
        }
        Ok(())
    }

    /// One forward/backward/update step on a batch of the planned size.
    pub fn step(&mut self, x: &FloatTensor, labels: &[usize], epoch: u64) -> Result<StepMetrics> {
        self.check_inputs(x, labels)?;
        if x.shape()[0] != self.plan.options.batch {
            return Err(Error::Run(format!(
                "batch of {} samples, plan expects {}",
                x.shape()[0],
                self.plan.options.batch
            )));
        }
        self.rescale.batch = self.batches_done;
        let builds_before = self.cache.builds();
        let releases_before = self.releases();
        let graph = &self.graph;
        let plan = &self.plan;
        let mut ctx = ExecContext {
            graph,
            input: x,
            labels,
            weights: &self.params.weights,
            masters: self.params.masters.as_deref(),
            splits: &plan.splits,
            scales: &mut self.rescale,
            values: BTreeMap::new(),
            updates: BTreeMap::new(),
            recomputed: Vec::new(),
        };
        let mut durations = Vec::with_capacity(plan.subgraphs.len());
        for (i, sg) in plan.subgraphs.subgraphs.iter().enumerate() {
            if let Some(b) = self.budget.as_mut() {
                let released = b.state.ensure_resident(i, &b.catalog)?;
                for r in released {
                    self.cache.invalidate(b.catalog.owners[r as usize]);
                }
            }
            let (_, built) = self.cache.get_or_build(i, plan.hashes[i], || {
                Ok(BuiltSubgraph {
                    ops: sg.ops.clone(),
                    buffer_bytes: sg
                        .ops
                        .iter()
                        .map(|&o| graph.nodes[o as usize].out_bytes(plan.options.batch))
                        .sum(),
                })
            })?;
            let backend = BackendDescriptor::for_processor(sg.processor);
            let elapsed = execute_subgraph(&backend, sg, &mut ctx, &plan.latencies)?;
            durations.push(elapsed + if built { plan.build_cost(i) } else { 0.0 });
        }
        let Some(Value::Loss(loss)) = ctx.values.get(&graph.loss) else {
            return Err(Error::Internal("loss node produced no loss".into()));
        };
        let logits = match graph.nodes[graph.loss as usize].inputs[0] {
            Operand::Node(n) => ctx.value(n)?.quant().map(dequantize),
            _ => None,
        }
        .ok_or_else(|| Error::Internal("loss input is not a tensor".into()))?;
        let logits = logits.reshape(vec![labels.len(), graph.classes])?;
        let metrics = StepMetrics {
            batch: self.batches_done,
            epoch,
            loss: loss.loss,
            train_acc: accuracy(&logits, labels),
            sim_ms: plan.batch_ms(&durations),
            recomputes: ctx.recomputed.len(),
            builds: self.cache.builds() - builds_before,
            releases: self.budget.as_ref().map_or(0, |b| b.state.deallocations()) - releases_before,
        };
        let updates = std::mem::take(&mut ctx.updates);
        self.params.apply(updates)?;
        self.batches_done += 1;
        Ok(metrics)
    }

    /// Forward-only evaluation with fresh exponents; returns accuracy.
    pub fn evaluate(&self, data: &Dataset, chunk: usize) -> Result<f64> {
        evaluate_int8(&self.graph, &self.params, data, chunk)
    }
}

/// INT8 inference accuracy of `params` on `data`.
pub fn evaluate_int8(
    graph: &TrainGraph,
    params: &ParamStore,
    data: &Dataset,
    chunk: usize,
) -> Result<f64> {
    if data.sample_shape != graph.input_shape {
        return Err(Error::Run(format!(
            "dataset samples {:?} do not match model input {:?}",
            data.sample_shape, graph.input_shape
        )));
    }
    let logits_node = match graph.nodes[graph.loss as usize].inputs[0] {
        Operand::Node(n) => n,
        _ => return Err(Error::Internal("loss input is not a node".into())),
    };
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut hits = 0.0;
    let splits = BTreeMap::new();
    for part in idx.chunks(chunk.max(1)) {
        let (x, labels) = data.gather(part)?;
        let mut scales = PerBatchRescale;
        let mut ctx = ExecContext {
            graph,
            input: &x,
            labels: &labels,
            weights: &params.weights,
            masters: params.masters.as_deref(),
            splits: &splits,
            scales: &mut scales,
            values: BTreeMap::new(),
            updates: BTreeMap::new(),
            recomputed: Vec::new(),
        };
        for n in graph
            .nodes
            .iter()
            .filter(|n| n.phase == Phase::Fwd && n.id <= logits_node)
        {
            run_node(n, &mut ctx)?;
        }
        let logits = ctx
            .value(logits_node)?
            .quant()
            .map(dequantize)
            .ok_or_else(|| Error::Internal("logits are not a tensor".into()))?
            .reshape(vec![part.len(), graph.classes])?;
        hits += accuracy(&logits, &labels) * part.len() as f64;
    }
    Ok(hits / data.len().max(1) as f64)
}

impl Trainer {
    pub fn checkpoint(&self) -> super::checkpoint::Checkpoint {
        super::checkpoint::Checkpoint {
            params: self.params.clone(),
            rescale: self.rescale.states.clone(),
            batches_done: self.batches_done,
        }
    }

    /// Continues from a checkpoint taken with the same graph.
    pub fn restore(&mut self, ck: super::checkpoint::Checkpoint) -> Result<()> {
        if ck.params.weights.len() != self.graph.params.len()
            || ck.rescale.keys().ne(self.rescale.states.keys())
        {
            return Err(Error::Run("checkpoint does not match this graph".into()));
        }
        for (w, p) in ck.params.weights.iter().zip(&self.graph.params) {
            if w.shape() != p.shape.as_slice() {
                return Err(Error::Run(format!(
                    "checkpoint shape mismatch for {}",
                    p.name
                )));
            }
        }
        self.params = ck.params;
        self.rescale.states = ck.rescale;
        self.batches_done = ck.batches_done;
        Ok(())
    }
}
