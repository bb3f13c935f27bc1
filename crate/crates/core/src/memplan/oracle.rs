//! Exhaustive minimum-deallocation search, for validating the release policy
//! on small instances.

use std::collections::HashMap;

use super::ReleaseCatalog;
use crate::error::{Error, Result};

/// Largest region count the search accepts.
pub const MAX_REGIONS: usize = 20;

/// Fewest region releases over all release schedules that keep every step
/// within budget while running `sequence` in order.
pub fn min_deallocations(cat: &ReleaseCatalog, sequence: &[usize]) -> Result<u64> {
    let n = cat.region_count();
    if n > MAX_REGIONS {
        return Err(Error::InvalidArgument(format!(
            "oracle limited to {MAX_REGIONS} regions, got {n}"
        )));
    }
    let bytes = |mask: u32| -> u64 {
        (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| cat.sizes[i])
            .sum()
    };
    let mut states: HashMap<u32, u64> = HashMap::from([(0, 0)]);
    for &sg in sequence {
        let own: u32 = cat
            .subgraph_regions
            .get(sg)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown subgraph {sg}")))?
            .iter()
            .fold(0, |m, &r| m | 1 << r);
        let mut next: HashMap<u32, u64> = HashMap::new();
        let mut relax = |mask: u32, cost: u64| {
            let e = next.entry(mask).or_insert(u64::MAX);
            *e = (*e).min(cost);
        };
        for (&mask, &cost) in &states {
            let total = bytes(mask | own);
            if total <= cat.budget {
                relax(mask | own, cost);
                continue;
            }
            let deficit = total - cat.budget;
            let candidates = mask & !own;
            // every inclusion-minimal sufficient subset of the candidates
            let mut sub = candidates;
            while sub != 0 {
                let freed = bytes(sub);
                if freed >= deficit
                    && (0..n).all(|i| sub >> i & 1 == 0 || freed - cat.sizes[i] < deficit)
                {
                    relax((mask & !sub) | own, cost + sub.count_ones() as u64);
                }
                sub = (sub - 1) & candidates;
            }
        }
        if next.is_empty() {
            return Err(Error::Capacity(format!(
                "subgraph {sg} cannot be made resident"
            )));
        }
        states = next;
    }
    Ok(states.values().copied().min().unwrap_or(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memplan::{prepare_catalog, BudgetState};

    #[test]
    fn cyclic_three_under_two() {
        let cat = prepare_catalog(&[vec![50], vec![50], vec![50]], 100).unwrap();
        let seq: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let mut st = BudgetState::new(&cat);
        for &sg in &seq {
            st.ensure_resident(sg, &cat).unwrap();
        }
        assert_eq!(min_deallocations(&cat, &seq).unwrap(), st.deallocations());
    }

    #[test]
    fn no_pressure_no_releases() {
        let cat = prepare_catalog(&[vec![10], vec![10]], 100).unwrap();
        assert_eq!(min_deallocations(&cat, &[0, 1, 0, 1]).unwrap(), 0);
    }
}
