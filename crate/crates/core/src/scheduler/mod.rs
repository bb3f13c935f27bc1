//! CPU/accelerator co-scheduling.
//!
//! Operators are linearized by a deterministic topological sort, profiled on
//! both processors, and placed by a two-state dynamic program that charges a
//! context-switch latency whenever consecutive operators change processor.
//! The resulting runs become compute subgraphs, which a list simulator then
//! overlaps on the two processors wherever dependencies allow.

mod dp;
mod profile;
mod simulate;
mod subgraph;
mod topo;

pub use dp::{schedule_bruteforce, schedule_dp, schedule_greedy, sequential_cost};
pub use profile::{OpProfile, ProfileSet};
pub use simulate::{simulate_makespan, simulate_with_durations};
pub use subgraph::{build_subgraphs, Subgraph, SubgraphPlan};
pub use topo::{topo_order, Dag};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub type OpId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Processor {
    Cpu,
    Dsp,
}

impl fmt::Display for Processor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Processor::Cpu => "cpu",
            Processor::Dsp => "dsp",
        })
    }
}

/// Latency of moving execution and data between CPU and accelerator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchCost {
    pub latency: f64,
}

impl SwitchCost {
    pub fn new(latency: f64) -> crate::Result<Self> {
        if !latency.is_finite() || latency < 0.0 {
            return Err(crate::Error::InvalidArgument(format!(
                "switch latency must be finite and non-negative, got {latency}"
            )));
        }
        Ok(Self { latency })
    }
}

impl Default for SwitchCost {
    /// 25 ms of CPU-DSP copy overhead per switch.
    fn default() -> Self {
        Self { latency: 25.0 }
    }
}

/// Operator placement over a fixed execution order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub order: Vec<OpId>,
    pub assignment: Vec<Processor>,
    /// Sequential latency: all operator latencies plus one switch per change.
    pub total_latency: f64,
    pub switch_count: usize,
}

impl Schedule {
    pub fn processor_of(&self, op: OpId) -> Option<Processor> {
        self.order
            .iter()
            .position(|&o| o == op)
            .map(|i| self.assignment[i])
    }

    pub fn placement(&self) -> BTreeMap<OpId, Processor> {
        self.order
            .iter()
            .copied()
            .zip(self.assignment.iter().copied())
            .collect()
    }

    /// JSON report with the assignment, `t_model` and switch count.
    pub fn report(&self, makespan: Option<f64>) -> serde_json::Value {
        let assignment: BTreeMap<String, Processor> = self
            .order
            .iter()
            .zip(&self.assignment)
            .map(|(op, p)| (op.to_string(), *p))
            .collect();
        let mut v = serde_json::json!({
            "assignment": assignment,
            "t_model_ms": self.total_latency,
            "switch_count": self.switch_count,
            "ops_on_cpu": self.assignment.iter().filter(|p| **p == Processor::Cpu).count(),
            "ops_on_dsp": self.assignment.iter().filter(|p| **p == Processor::Dsp).count(),
        });
        if let Some(m) = makespan {
            v["makespan_ms"] = serde_json::json!(m);
        }
        v
    }
}
