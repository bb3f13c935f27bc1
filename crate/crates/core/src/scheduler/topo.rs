use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use super::OpId;
use crate::error::{Error, Result};

/// Plain dependency graph over operator ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dag {
    pub nodes: Vec<OpId>,
    /// `(producer, consumer)` pairs.
    pub edges: Vec<(OpId, OpId)>,
}

impl Dag {
    pub fn chain(n: u32) -> Self {
        Self {
            nodes: (0..n).collect(),
            edges: (1..n).map(|i| (i - 1, i)).collect(),
        }
    }
}

/// Kahn's algorithm; among ready nodes the smallest id goes first.
pub fn topo_order(dag: &Dag) -> Result<Vec<OpId>> {
    let mut indegree: BTreeMap<OpId, usize> = dag.nodes.iter().map(|&n| (n, 0)).collect();
    let mut succ: BTreeMap<OpId, Vec<OpId>> = BTreeMap::new();
    for &(a, b) in &dag.edges {
        if !indegree.contains_key(&a) || !indegree.contains_key(&b) {
            return Err(Error::Graph(format!(
                "edge {a} -> {b} names an unknown node"
            )));
        }
        *indegree.get_mut(&b).unwrap() += 1;
        succ.entry(a).or_default().push(b);
    }
    let mut ready: BinaryHeap<Reverse<OpId>> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&n, _)| Reverse(n))
        .collect();
    let mut order = Vec::with_capacity(indegree.len());
    while let Some(Reverse(n)) = ready.pop() {
        order.push(n);
        for &m in succ.get(&n).map(Vec::as_slice).unwrap_or(&[]) {
            let d = indegree.get_mut(&m).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.push(Reverse(m));
            }
        }
    }
    if order.len() != indegree.len() {
        return Err(Error::Graph(format!(
            "cycle detected: {} of {} nodes sortable",
            order.len(),
            indegree.len()
        )));
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn chain_is_identity() {
        assert_eq!(topo_order(&Dag::chain(5)).unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn diamond_sources_first() {
        let dag = Dag {
            nodes: vec![3, 2, 1, 0],
            edges: vec![(0, 1), (0, 2), (1, 3), (2, 3)],
        };
        assert_eq!(topo_order(&dag).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn cycle_is_graph_error() {
        let dag = Dag {
            nodes: vec![0, 1],
            edges: vec![(0, 1), (1, 0)],
        };
        assert!(matches!(topo_order(&dag), Err(Error::Graph(_))));
    }

    proptest! {
        #[test]
        fn random_dag_order_respects_edges(n in 1u32..30, raw in prop::collection::vec((0u32..30, 0u32..30), 0..80)) {
            // Orient every edge from the smaller to the larger id, then relabel
            // by a permutation so ids do not coincide with a valid order.
            let perm: Vec<u32> = (0..n).map(|i| (i * 7 + 3) % n).collect();
            let edges: Vec<(u32, u32)> = raw
                .into_iter()
                .filter(|(a, b)| a < b && *b < n)
                .map(|(a, b)| (perm[a as usize], perm[b as usize]))
                .collect();
            let dag = Dag { nodes: (0..n).collect(), edges: edges.clone() };
            if let Ok(order) = topo_order(&dag) {
                let pos: BTreeMap<u32, usize> = order.iter().enumerate().map(|(i, &o)| (o, i)).collect();
                prop_assert_eq!(order.len(), n as usize);
                for (a, b) in edges {
                    prop_assert!(pos[&a] < pos[&b]);
                }
            } else {
                // perm may not be a permutation when gcd(7, n) != 1
                prop_assert!(n % 7 == 0);
            }
        }
    }
}
