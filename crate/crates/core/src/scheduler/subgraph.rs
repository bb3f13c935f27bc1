use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Dag, OpId, Processor, Schedule};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subgraph {
    pub id: usize,
    pub processor: Processor,
    /// Operators in execution order.
    pub ops: Vec<OpId>,
}

/// Subgraphs in execution order plus the dependencies between them.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgraphPlan {
    pub subgraphs: Vec<Subgraph>,
    /// `(producer, consumer)` subgraph index pairs, deduplicated.
    pub edges: Vec<(usize, usize)>,
}

impl SubgraphPlan {
    pub fn len(&self) -> usize {
        self.subgraphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subgraphs.is_empty()
    }

    pub fn predecessors(&self, sg: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.1 == sg).map(|e| e.0)
    }

    pub fn subgraph_of(&self) -> BTreeMap<OpId, usize> {
        self.subgraphs
            .iter()
            .flat_map(|s| s.ops.iter().map(move |&o| (o, s.id)))
            .collect()
    }
}

/// Cuts the scheduled order into maximal same-processor runs.
pub fn build_subgraphs(dag: &Dag, schedule: &Schedule) -> Result<SubgraphPlan> {
    let mut subgraphs: Vec<Subgraph> = Vec::new();
    for (&op, &p) in schedule.order.iter().zip(&schedule.assignment) {
        match subgraphs.last_mut() {
            Some(sg) if sg.processor == p => sg.ops.push(op),
            _ => subgraphs.push(Subgraph {
                id: subgraphs.len(),
                processor: p,
                ops: vec![op],
            }),
        }
    }
    let mut plan = SubgraphPlan {
        subgraphs,
        edges: Vec::new(),
    };
    let owner = plan.subgraph_of();
    if owner.len() != dag.nodes.len() || dag.nodes.iter().any(|n| !owner.contains_key(n)) {
        return Err(Error::Schedule(
            "schedule does not cover the graph's operators exactly".into(),
        ));
    }
    let mut edges = BTreeSet::new();
    for &(a, b) in &dag.edges {
        let (sa, sb) = (owner[&a], owner[&b]);
        if sa > sb {
            return Err(Error::Schedule(format!(
                "edge {a} -> {b} runs against the schedule order"
            )));
        }
        if sa != sb {
            edges.insert((sa, sb));
        }
    }
    plan.edges = edges.into_iter().collect();
    Ok(plan)
}
