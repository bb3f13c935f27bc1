//! Preparing stage: placement, subgraphs, micro-batch plans and the
//! per-batch latency model.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{CostModel, LatencyMap};
use crate::batchsplit::{plan_split, SplitPlan, DEFAULT_THETA};
use crate::error::{Error, Result};
use crate::memplan::structure_hash;
use crate::scheduler::{
    build_subgraphs, schedule_dp, sequential_cost, simulate_with_durations, topo_order, OpProfile,
    Processor, ProfileSet, Schedule, SubgraphPlan, SwitchCost,
};
use crate::translator::{NodeId, OpKind, Operand, TrainGraph};

/// The four optimizations that can be switched off for ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Technique {
    Rescale,
    Reuse,
    Split,
    Cosched,
}

impl Technique {
    /// Order in which the ablation enables them.
    pub const ALL: [Technique; 4] = [
        Technique::Rescale,
        Technique::Reuse,
        Technique::Split,
        Technique::Cosched,
    ];
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Technique::Rescale => "rescale",
            Technique::Reuse => "reuse",
            Technique::Split => "split",
            Technique::Cosched => "cosched",
        })
    }
}

impl FromStr for Technique {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rescale" => Ok(Technique::Rescale),
            "reuse" => Ok(Technique::Reuse),
            "split" => Ok(Technique::Split),
            "cosched" => Ok(Technique::Cosched),
            _ => Err(Error::InvalidArgument(format!(
                "unknown technique `{s}` (expected rescale, split, cosched or reuse)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Techniques {
    enabled: BTreeSet<Technique>,
}

impl Default for Techniques {
    fn default() -> Self {
        Self::all()
    }
}

impl Techniques {
    pub fn all() -> Self {
        Self {
            enabled: Technique::ALL.into_iter().collect(),
        }
    }

    pub fn none() -> Self {
        Self {
            enabled: BTreeSet::new(),
        }
    }

    pub fn without(disabled: &[Technique]) -> Self {
        let mut t = Self::all();
        for d in disabled {
            t.enabled.remove(d);
        }
        t
    }

    pub fn with(mut self, t: Technique) -> Self {
        self.enabled.insert(t);
        self
    }

    pub fn on(&self, t: Technique) -> bool {
        self.enabled.contains(&t)
    }
}

/// Charge for building a subgraph's execution state when it is not reused.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildCost {
    pub base_ms: f64,
    pub per_op_ms: f64,
}

impl Default for BuildCost {
    fn default() -> Self {
        Self {
            base_ms: 5.0,
            per_op_ms: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanOptions {
    pub batch: usize,
    pub switch: SwitchCost,
    pub techniques: Techniques,
    pub theta: f64,
    pub build: BuildCost,
}

impl PlanOptions {
    pub fn new(batch: usize) -> Self {
        Self {
            batch,
            switch: SwitchCost::default(),
            techniques: Techniques::all(),
            theta: DEFAULT_THETA,
            build: BuildCost::default(),
        }
    }
}

/// Everything the execution stage needs for one batch size.
#[derive(Clone, Debug)]
pub struct ExecutionPlan {
    pub options: PlanOptions,
    pub schedule: Schedule,
    pub subgraphs: SubgraphPlan,
    /// Split plans for operators that run as micro-batches.
    pub splits: BTreeMap<NodeId, SplitPlan>,
    /// Per-node `(cpu, dsp)` latency including any micro-batching.
    pub latencies: LatencyMap,
    /// Structure hash per subgraph, the key of the reuse cache.
    pub hashes: Vec<u64>,
}

fn split_latency(cost: &CostModel, graph: &TrainGraph, id: NodeId, plan: &SplitPlan) -> (f64, f64) {
    let node = &graph.nodes[id as usize];
    plan.ranges()
        .into_iter()
        .fold((0.0, 0.0), |(c, d), (_, len)| {
            let (lc, ld) = cost.node_latency(node, len);
            (c + lc, d + ld)
        })
}

impl ExecutionPlan {
    pub fn prepare(graph: &TrainGraph, cost: &CostModel, options: PlanOptions) -> Result<Self> {
        if options.batch == 0 {
            return Err(Error::InvalidArgument("batch must be at least 1".into()));
        }
        let batch = options.batch;
        let tech = &options.techniques;
        let mut splits = BTreeMap::new();
        if tech.on(Technique::Split) {
            let table = cost.dsp_latency_table();
            for n in graph.nodes.iter().filter(|n| n.splittable) {
                if table.contains(&n.signature) {
                    let p = plan_split(&table, &n.signature, batch, options.theta)?;
                    if p.is_split() {
                        splits.insert(n.id, p);
                    }
                }
            }
        }
        let mut latencies: LatencyMap = BTreeMap::new();
        for n in &graph.nodes {
            let lat = match splits.get(&n.id) {
                Some(p) => split_latency(cost, graph, n.id, p),
                None => cost.node_latency(n, batch),
            };
            latencies.insert(n.id, lat);
        }
        // A dynamic rescale re-reads the INT32 result it reduces, so it costs
        // as much as producing that result did.
        for n in graph
            .nodes
            .iter()
            .filter(|n| n.kind == OpKind::ReduceMaxScale)
        {
            if let Some(&Operand::Node(src)) = n.inputs.first() {
                let (c, d) = latencies[&src];
                let dsp = if n.dsp_supported { d } else { f64::INFINITY };
                latencies.insert(n.id, (c, dsp));
            }
        }
        let dag = graph.dag();
        let order = topo_order(&dag)?;
        let mut profiles = ProfileSet::new();
        for n in &graph.nodes {
            let (c, d) = latencies[&n.id];
            profiles.insert(OpProfile {
                op_id: n.id,
                latency_cpu_ms: c,
                latency_dsp_ms: d,
                flops: n.flops(batch),
            })?;
        }
        let schedule = if tech.on(Technique::Cosched) {
            schedule_dp(&order, &profiles, options.switch)?
        } else {
            // Offload everything the accelerator supports, fall back otherwise.
            let assignment: Vec<Processor> = order
                .iter()
                .map(|&o| {
                    if latencies[&o].1.is_finite() {
                        Processor::Dsp
                    } else {
                        Processor::Cpu
                    }
                })
                .collect();
            let total = sequential_cost(&order, &assignment, &profiles, options.switch)?;
            Schedule {
                switch_count: assignment.windows(2).filter(|w| w[0] != w[1]).count(),
                order,
                assignment,
                total_latency: total,
            }
        };
        let subgraphs = build_subgraphs(&dag, &schedule)?;
        let hashes = subgraphs
            .subgraphs
            .iter()
            .map(|sg| {
                let ops: Vec<(NodeId, &str, &str)> = sg
                    .ops
                    .iter()
                    .map(|&o| {
                        let n = &graph.nodes[o as usize];
                        (o, n.kind.name(), n.signature.as_str())
                    })
                    .collect();
                structure_hash(&(sg.processor, batch, ops))
            })
            .collect();
        Ok(Self {
            options,
            schedule,
            subgraphs,
            splits,
            latencies,
            hashes,
        })
    }

    pub fn latency_on(&self, op: NodeId, p: Processor) -> f64 {
        let (c, d) = self.latencies.get(&op).copied().unwrap_or((0.0, 0.0));
        match p {
            Processor::Cpu => c,
            Processor::Dsp => d,
        }
    }

    pub fn build_cost(&self, sg: usize) -> f64 {
        let b = self.options.build;
        b.base_ms + b.per_op_ms * self.subgraphs.subgraphs[sg].ops.len() as f64
    }

    /// Bytes of every node output, grouped by subgraph, for the memory planner.
    pub fn region_sizes(&self, graph: &TrainGraph) -> Vec<Vec<u64>> {
        self.subgraphs
            .subgraphs
            .iter()
            .map(|sg| {
                sg.ops
                    .iter()
                    .map(|&o| graph.nodes[o as usize].out_bytes(self.options.batch).max(1))
                    .collect()
            })
            .collect()
    }

    /// Modelled batch time from per-subgraph execution times: overlapped on
    /// both processors under co-scheduling, sequential with one switch per
    /// processor change otherwise.
    pub fn batch_ms(&self, durations: &[f64]) -> f64 {
        if self.options.techniques.on(Technique::Cosched) {
            simulate_with_durations(&self.subgraphs, durations, self.options.switch)
        } else {
            durations.iter().sum::<f64>()
                + self.schedule.switch_count as f64 * self.options.switch.latency
        }
    }

    /// Execution time of subgraph `sg` given which rescale sites recompute
    /// and whether it had to be built.
    pub fn subgraph_ms(
        &self,
        graph: &TrainGraph,
        sg: usize,
        recompute: &dyn Fn(NodeId) -> bool,
        built: bool,
    ) -> f64 {
        let s = &self.subgraphs.subgraphs[sg];
        let ops: f64 = s
            .ops
            .iter()
            .filter(|&&o| graph.nodes[o as usize].kind != OpKind::ReduceMaxScale || recompute(o))
            .map(|&o| self.latency_on(o, s.processor))
            .sum();
        ops + if built { self.build_cost(sg) } else { 0.0 }
    }
}
