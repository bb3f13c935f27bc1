use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use crate::error::Result;

/// Deterministic hash of a subgraph's structure.
pub fn structure_hash<T: Hash + ?Sized>(structure: &T) -> u64 {
    let mut h = DefaultHasher::new();
    structure.hash(&mut h);
    h.finish()
}

/// Prepared-subgraph cache keyed by subgraph id and validated by structure hash.
#[derive(Debug)]
pub struct SubgraphCache<H> {
    enabled: bool,
    entries: BTreeMap<usize, (u64, H)>,
    builds: u64,
}

impl<H> SubgraphCache<H> {
    /// With `enabled = false` every lookup rebuilds.
    pub fn new(enabled: bool) -> Self {
        Self {
            enabled,
            entries: BTreeMap::new(),
            builds: 0,
        }
    }

    pub fn builds(&self) -> u64 {
        self.builds
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Returns the cached handle and whether `builder` ran.
    pub fn get_or_build(
        &mut self,
        id: usize,
        hash: u64,
        builder: impl FnOnce() -> Result<H>,
    ) -> Result<(&H, bool)> {
        let hit = self.enabled && self.entries.get(&id).is_some_and(|(h, _)| *h == hash);
        if !hit {
            let handle = builder()?;
            self.builds += 1;
            self.entries.insert(id, (hash, handle));
        }
        Ok((&self.entries[&id].1, !hit))
    }

    pub fn invalidate(&mut self, id: usize) {
        self.entries.remove(&id);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_batches_build_once() {
        let mut c = SubgraphCache::new(true);
        let h = structure_hash(&["conv", "shift"]);
        for _ in 0..2 {
            c.get_or_build(0, h, || Ok(7)).unwrap();
        }
        assert_eq!(c.builds(), 1);
    }

    #[test]
    fn structure_edit_rebuilds() {
        let mut c = SubgraphCache::new(true);
        c.get_or_build(0, structure_hash(&["conv"]), || Ok(1))
            .unwrap();
        let (v, built) = c
            .get_or_build(0, structure_hash(&["conv", "relu"]), || Ok(2))
            .unwrap();
        assert_eq!((*v, built), (2, true));
        assert_eq!(c.builds(), 2);
    }

    #[test]
    fn hundred_batches_distinct_count() {
        let mut on = SubgraphCache::new(true);
        let mut off = SubgraphCache::new(false);
        for _ in 0..100 {
            for sg in 0..5 {
                on.get_or_build(sg, sg as u64, || Ok(())).unwrap();
                off.get_or_build(sg, sg as u64, || Ok(())).unwrap();
            }
        }
        assert_eq!(on.builds(), 5);
        assert_eq!(off.builds(), 500);
    }
}
