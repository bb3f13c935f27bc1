//! Compute-subgraph reuse under a memory budget.
//!
//! Prepared subgraphs are cached across batches. Their buffers live in
//! regions that must be resident while the subgraph runs; when the budget is
//! exceeded, regions are released most-recently-used first, because in the
//! periodic training cycle the MRU subgraph is the one needed again last.

mod budget;
mod cache;
mod catalog;
pub mod oracle;

pub use budget::{ensure_resident, AllocEvent, BudgetState, MemoryRegion};
pub use cache::{structure_hash, SubgraphCache};
pub use catalog::{prepare_catalog, Combination, DeficitClass, ReleaseCatalog};

pub type RegionId = u32;
