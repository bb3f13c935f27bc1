use serde::Serialize;

use super::RegionId;
use crate::error::{Error, Result};

/// Subset enumeration is skipped above this many regions.
const MAX_ENUMERATED: usize = 16;

/// A set of regions that could be released together.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Combination {
    pub regions: Vec<RegionId>,
    pub bytes: u64,
}

/// Release candidates when `incoming` arrives with everything else resident.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DeficitClass {
    pub incoming: usize,
    pub deficit: u64,
    /// Combinations freeing at least `deficit`, by (count, excess).
    pub combinations: Vec<Combination>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReleaseCatalog {
    pub budget: u64,
    /// Region sizes, indexed by region id.
    pub sizes: Vec<u64>,
    /// Owning subgraph of each region.
    pub owners: Vec<usize>,
    /// Region ids of each subgraph.
    pub subgraph_regions: Vec<Vec<RegionId>>,
    /// Per subgraph: non-empty subsets of its regions by (bytes, count).
    pub level_subsets: Vec<Vec<Combination>>,
    pub classes: Vec<DeficitClass>,
}

impl ReleaseCatalog {
    pub fn subgraph_count(&self) -> usize {
        self.subgraph_regions.len()
    }

    pub fn region_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn subgraph_bytes(&self, sg: usize) -> u64 {
        self.subgraph_regions[sg]
            .iter()
            .map(|&r| self.sizes[r as usize])
            .sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.sizes.iter().sum()
    }

    /// True when no release can ever be needed.
    pub fn is_trivial(&self) -> bool {
        self.classes.iter().all(|c| c.deficit == 0)
    }

    pub fn deficit_class(&self, incoming: usize) -> Option<&DeficitClass> {
        self.classes.get(incoming)
    }
}

fn subset_combinations(ids: &[RegionId], sizes: &[u64]) -> Vec<Combination> {
    let n = ids.len().min(MAX_ENUMERATED);
    (1u32..(1 << n))
        .map(|mask| {
            let regions: Vec<RegionId> = (0..n)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| ids[i])
                .collect();
            let bytes = regions.iter().map(|&r| sizes[r as usize]).sum();
            Combination { regions, bytes }
        })
        .collect()
}

/// Enumerates release combinations for every subgraph, both within its own
/// regions and against every other subgraph's worst-case arrival.
pub fn prepare_catalog(subgraphs: &[Vec<u64>], budget: u64) -> Result<ReleaseCatalog> {
    if subgraphs.len() >= 100 {
        return Err(Error::InvalidArgument(format!(
            "{} subgraphs; at most 99 are supported",
            subgraphs.len()
        )));
    }
    let mut sizes = Vec::new();
    let mut owners = Vec::new();
    let mut subgraph_regions = Vec::new();
    for (sg, regions) in subgraphs.iter().enumerate() {
        let own: u64 = regions.iter().sum();
        if own > budget {
            return Err(Error::Capacity(format!(
                "subgraph {sg} needs {own} bytes, budget is {budget}"
            )));
        }
        let mut ids = Vec::with_capacity(regions.len());
        for &size in regions {
            if size == 0 {
                return Err(Error::InvalidArgument(format!(
                    "subgraph {sg} has a zero-sized region"
                )));
            }
            ids.push(sizes.len() as RegionId);
            sizes.push(size);
            owners.push(sg);
        }
        subgraph_regions.push(ids);
    }
    let level_subsets = subgraph_regions
        .iter()
        .map(|ids| {
            let mut combos = subset_combinations(ids, &sizes);
            combos.sort_by(|a, b| {
                (a.bytes, a.regions.len(), &a.regions).cmp(&(b.bytes, b.regions.len(), &b.regions))
            });
            combos
        })
        .collect();
    let total: u64 = sizes.iter().sum();
    let classes = (0..subgraphs.len())
        .map(|incoming| {
            let deficit = total.saturating_sub(budget);
            let others: Vec<RegionId> = (0..sizes.len() as RegionId)
                .filter(|&r| owners[r as usize] != incoming)
                .collect();
            let mut combinations = if deficit == 0 {
                Vec::new()
            } else {
                subset_combinations(&others, &sizes)
                    .into_iter()
                    .filter(|c| c.bytes >= deficit)
                    .collect()
            };
            combinations.sort_by(|a, b| {
                (a.regions.len(), a.bytes, &a.regions).cmp(&(b.regions.len(), b.bytes, &b.regions))
            });
            DeficitClass {
                incoming,
                deficit,
                combinations,
            }
        })
        .collect();
    Ok(ReleaseCatalog {
        budget,
        sizes,
        owners,
        subgraph_regions,
        level_subsets,
        classes,
    })
}
