//! Latency-only simulation of training batches, without running kernels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::{CostModel, ScalePolicy};
use crate::error::Result;
use crate::memplan::SubgraphCache;
use crate::translator::{NodeId, TrainGraph};

use super::plan::{ExecutionPlan, PlanOptions, Technique};
use super::train::AdaptiveRescale;

/// Synthetic exponent trace: flips between two neighbouring values after
/// intervals drawn uniformly from `[lo, hi]` batches.
#[derive(Clone, Debug)]
pub struct ExponentTrace {
    values: Vec<u32>,
}

impl ExponentTrace {
    pub fn generate(batches: usize, base: u32, lo: u64, hi: u64, rng: &mut impl Rng) -> Self {
        let mut values = Vec::with_capacity(batches);
        let mut cur = base;
        while values.len() < batches {
            let run = rng.random_range(lo..=hi) as usize;
            values.extend(std::iter::repeat_n(cur, run.min(batches - values.len())));
            cur = if cur == base { base + 1 } else { base };
        }
        Self { values }
    }

    pub fn at(&self, batch: usize) -> u32 {
        self.values[batch]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct LatencyReport {
    pub batches: usize,
    pub mean_ms: f64,
    pub first_ms: f64,
    pub last_ms: f64,
    pub recomputes: usize,
    pub builds: u64,
}

/// Mean simulated per-batch latency over `batches` batches. Rescale sites
/// follow synthetic exponent traces changing every 10 to 60 batches.
pub fn simulate_batches(
    graph: &TrainGraph,
    plan: &ExecutionPlan,
    batches: usize,
    seed: u64,
) -> Result<LatencyReport> {
    let tech = &plan.options.techniques;
    let mut rescale = AdaptiveRescale::new(graph, tech.on(Technique::Rescale));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let traces: Vec<(NodeId, ExponentTrace)> = rescale
        .states
        .keys()
        .map(|&id| (id, ExponentTrace::generate(batches, 8, 10, 60, &mut rng)))
        .collect();
    let mut cache: SubgraphCache<()> = SubgraphCache::new(tech.on(Technique::Reuse));
    let mut total = 0.0;
    let (mut first, mut last, mut recomputes) = (0.0, 0.0, 0);
    for b in 0..batches {
        rescale.batch = b as u64;
        let mut recomputed = std::collections::BTreeSet::new();
        for (id, trace) in &traces {
            let (_, r) = rescale.exponent(*id, &mut || trace.at(b));
            if r {
                recomputed.insert(*id);
            }
        }
        recomputes += recomputed.len();
        let mut durations = Vec::with_capacity(plan.subgraphs.len());
        for i in 0..plan.subgraphs.len() {
            let (_, built) = cache.get_or_build(i, plan.hashes[i], || Ok(()))?;
            durations.push(plan.subgraph_ms(graph, i, &|o| recomputed.contains(&o), built));
        }
        let ms = plan.batch_ms(&durations);
        if b == 0 {
            first = ms;
        }
        last = ms;
        total += ms;
    }
    Ok(LatencyReport {
        batches,
        mean_ms: total / batches.max(1) as f64,
        first_ms: first,
        last_ms: last,
        recomputes,
        builds: cache.builds(),
    })
}

/// Mean per-batch latency as each technique is enabled in turn, starting
/// from all off. Returns `(label, mean ms)` pairs.
pub fn ablation(
    graph: &TrainGraph,
    cost: &CostModel,
    base: &PlanOptions,
    batches: usize,
    seed: u64,
) -> Result<Vec<(String, f64)>> {
    let mut opts = base.clone();
    opts.techniques = super::plan::Techniques::none();
    let mut out = Vec::new();
    let mut label = String::from("none");
    loop {
        let plan = ExecutionPlan::prepare(graph, cost, opts.clone())?;
        out.push((
            label.clone(),
            simulate_batches(graph, &plan, batches, seed)?.mean_ms,
        ));
        let Some(next) = Technique::ALL.into_iter().find(|t| !opts.techniques.on(*t)) else {
            break;
        };
        opts.techniques = opts.techniques.clone().with(next);
        label = if label == "none" {
            format!("+{next}")
        } else {
            format!("{label}+{next}")
        };
    }
    Ok(out)
}
