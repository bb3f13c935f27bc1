use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{RegionId, ReleaseCatalog};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRegion {
    pub id: RegionId,
    pub size: u64,
    pub owner: usize,
    pub last_use_step: u64,
    pub resident: bool,
}

/// One row of the allocation trace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocEvent {
    pub step: u64,
    pub subgraph: usize,
    /// Released region ids joined by `;`.
    pub released: String,
    pub resident_bytes: u64,
}

#[derive(Clone, Debug)]
pub struct BudgetState {
    pub budget: u64,
    regions: Vec<MemoryRegion>,
    sum_resident: u64,
    step: u64,
    deallocations: u64,
    allocations: u64,
    trace: Vec<AllocEvent>,
}

impl BudgetState {
    pub fn new(cat: &ReleaseCatalog) -> Self {
        let regions = cat
            .sizes
            .iter()
            .zip(&cat.owners)
            .enumerate()
            .map(|(id, (&size, &owner))| MemoryRegion {
                id: id as RegionId,
                size,
                owner,
                last_use_step: 0,
                resident: false,
            })
            .collect();
        Self {
            budget: cat.budget,
            regions,
            sum_resident: 0,
            step: 0,
            deallocations: 0,
            allocations: 0,
            trace: Vec::new(),
        }
    }

    pub fn regions(&self) -> &[MemoryRegion] {
        &self.regions
    }

    pub fn sum_resident(&self) -> u64 {
        self.sum_resident
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Regions released so far.
    pub fn deallocations(&self) -> u64 {
        self.deallocations
    }

    /// Regions made resident so far.
    pub fn allocations(&self) -> u64 {
        self.allocations
    }

    pub fn trace(&self) -> &[AllocEvent] {
        &self.trace
    }

    pub fn resident_ids(&self) -> Vec<RegionId> {
        self.regions
            .iter()
            .filter(|r| r.resident)
            .map(|r| r.id)
            .collect()
    }

    /// CSV with header `step,subgraph,released,resident_bytes`.
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for e in &self.trace {
            wr.serialize(e)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Makes `sg`'s regions resident, releasing others if needed.
    pub fn ensure_resident(&mut self, sg: usize, cat: &ReleaseCatalog) -> Result<Vec<RegionId>> {
        ensure_resident(sg, self, cat)
    }
}

/// Picks regions to release: whole recency levels, most recent first, until
/// the level that covers the remaining deficit, from which only the
/// smallest sufficient subset is taken.
fn choose_release(
    sg: usize,
    st: &BudgetState,
    cat: &ReleaseCatalog,
    deficit: u64,
) -> Result<Vec<RegionId>> {
    let mut levels: BTreeMap<std::cmp::Reverse<u64>, Vec<RegionId>> = BTreeMap::new();
    for r in st.regions.iter().filter(|r| r.resident && r.owner != sg) {
        levels
            .entry(std::cmp::Reverse(r.last_use_step))
            .or_default()
            .push(r.id);
    }
    let mut released = Vec::new();
    let mut remaining = deficit;
    for ids in levels.values() {
        let level_bytes: u64 = ids.iter().map(|&r| cat.sizes[r as usize]).sum();
        if level_bytes < remaining {
            released.extend_from_slice(ids);
            remaining -= level_bytes;
            continue;
        }
        released.extend(best_fit(ids, cat, remaining));
        return Ok(released);
    }
    Err(Error::Capacity(format!(
        "subgraph {sg} needs {deficit} more bytes than can be released"
    )))
}

/// Smallest-excess subset of `ids` freeing at least `need`, fewest regions on ties.
fn best_fit(ids: &[RegionId], cat: &ReleaseCatalog, need: u64) -> Vec<RegionId> {
    let owner = cat.owners[ids[0] as usize];
    let same_level = ids.len() == cat.subgraph_regions[owner].len()
        && ids.iter().all(|r| cat.owners[*r as usize] == owner);
    if same_level && !cat.level_subsets[owner].is_empty() && ids.len() <= 16 {
        if let Some(c) = cat.level_subsets[owner].iter().find(|c| c.bytes >= need) {
            return c.regions.clone();
        }
    }
    // Mixed or partially resident level: enumerate directly when small,
    // otherwise take largest-first.
    if ids.len() <= 16 {
        let mut best: Option<(u64, usize, Vec<RegionId>)> = None;
        for mask in 1u32..(1 << ids.len()) {
            let pick: Vec<RegionId> = (0..ids.len())
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| ids[i])
                .collect();
            let bytes: u64 = pick.iter().map(|&r| cat.sizes[r as usize]).sum();
            if bytes < need {
                continue;
            }
            let key = (bytes, pick.len(), pick);
            if best.as_ref().is_none_or(|b| key < *b) {
                best = Some(key);
            }
        }
        return best.map(|b| b.2).unwrap_or_default();
    }
    let mut sorted = ids.to_vec();
    sorted.sort_by_key(|&r| std::cmp::Reverse(cat.sizes[r as usize]));
    let mut out = Vec::new();
    let mut freed = 0;
    for r in sorted {
        if freed >= need {
            break;
        }
        freed += cat.sizes[r as usize];
        out.push(r);
    }
    out
}

/// Makes `sg`'s regions resident under the budget. Returns the released ids.
pub fn ensure_resident(
    sg: usize,
    st: &mut BudgetState,
    cat: &ReleaseCatalog,
) -> Result<Vec<RegionId>> {
    let own = cat
        .subgraph_regions
        .get(sg)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown subgraph {sg}")))?;
    st.step += 1;
    let need: u64 = own
        .iter()
        .filter(|&&r| !st.regions[r as usize].resident)
        .map(|&r| cat.sizes[r as usize])
        .sum();
    let deficit = (st.sum_resident + need).saturating_sub(st.budget);
    let mut released = if deficit > 0 {
        choose_release(sg, st, cat, deficit)?
    } else {
        Vec::new()
    };
    released.sort_unstable();
    for &r in &released {
        let reg = &mut st.regions[r as usize];
        reg.resident = false;
        st.sum_resident -= reg.size;
        st.deallocations += 1;
    }
    for &r in own {
        let reg = &mut st.regions[r as usize];
        if !reg.resident {
            reg.resident = true;
            st.sum_resident += reg.size;
            st.allocations += 1;
        }
        reg.last_use_step = st.step;
    }
    debug_assert!(st.sum_resident <= st.budget);
    st.trace.push(AllocEvent {
        step: st.step,
        subgraph: sg,
        released: released
            .iter()
            .map(|r| r.to_string())
            .collect::<Vec<_>>()
            .join(";"),
        resident_bytes: st.sum_resident,
    });
    Ok(released)
}
