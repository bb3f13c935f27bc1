//! Self-adaptive rescaling.
//!
//! Recomputing a scale exponent means storing the INT32 intermediate, reducing
//! its maximum and reloading it for the shift. After an initial warmup the
//! exponent at a site tends to flip between two neighbouring values every few
//! dozen batches, so each site recomputes only every `period` batches, where
//! `period` is half the mean of the last few observed change intervals.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RescaleConfig {
    /// Batches of per-batch rescaling before the period may grow.
    pub warmup_batches: u64,
    /// Number of change intervals averaged to estimate the change frequency.
    pub history: usize,
}

impl Default for RescaleConfig {
    fn default() -> Self {
        Self {
            warmup_batches: 50,
            history: 4,
        }
    }
}

/// Controller state for one scale-factor site.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RescaleState {
    pub layer: usize,
    pub site: String,
    config: RescaleConfig,
    cached_exponent: Option<u32>,
    last_change_batch: u64,
    change_intervals: VecDeque<u64>,
    period: u64,
    batches_since_recompute: u64,
    /// Batch index at which the current warmup ends.
    warmup_until: u64,
    recomputes: u64,
}

impl RescaleState {
    pub fn new(layer: usize, site: impl Into<String>, config: RescaleConfig) -> Self {
        Self {
            layer,
            site: site.into(),
            config,
            cached_exponent: None,
            last_change_batch: 0,
            change_intervals: VecDeque::with_capacity(config.history),
            period: 1,
            batches_since_recompute: 0,
            warmup_until: config.warmup_batches,
            recomputes: 0,
        }
    }

    pub fn period(&self) -> u64 {
        self.period
    }

    pub fn cached_exponent(&self) -> Option<u32> {
        self.cached_exponent
    }

    pub fn change_intervals(&self) -> impl Iterator<Item = u64> + '_ {
        self.change_intervals.iter().copied()
    }

    pub fn recomputes(&self) -> u64 {
        self.recomputes
    }

    pub fn in_warmup(&self, batch: u64) -> bool {
        batch < self.warmup_until
    }

    pub fn should_recompute(&self, batch: u64) -> bool {
        self.cached_exponent.is_none()
            || self.in_warmup(batch)
            || self.batches_since_recompute + 1 >= self.period
    }

    /// Records the exponent computed on a recompute batch.
    pub fn observe(&mut self, fresh: u32, batch: u64) {
        self.recomputes += 1;
        self.batches_since_recompute = 0;
        let Some(cached) = self.cached_exponent else {
            self.cached_exponent = Some(fresh);
            self.last_change_batch = batch;
            return;
        };
        if fresh == cached {
            return;
        }
        if cached.abs_diff(fresh) > 1 && !self.in_warmup(batch) {
            // Drifted past the neighbouring value: the period was too long.
            self.change_intervals.clear();
            self.period = 1;
            self.warmup_until = batch + self.config.warmup_batches;
        } else {
            if self.change_intervals.len() == self.config.history {
                self.change_intervals.pop_front();
            }
            self.change_intervals
                .push_back((batch - self.last_change_batch).max(1));
            self.period = if self.in_warmup(batch + 1) {
                1
            } else {
                let mean =
                    self.change_intervals.iter().sum::<u64>() / self.change_intervals.len() as u64;
                (mean / 2).max(1)
            };
        }
        self.cached_exponent = Some(fresh);
        self.last_change_batch = batch;
    }

    /// Advances the counter on a batch that reused the cached exponent.
    pub fn skip(&mut self) {
        self.batches_since_recompute += 1;
    }

    /// The exponent to shift by this batch.
    pub fn effective_exponent(&self, fresh: Option<u32>) -> Option<u32> {
        fresh.or(self.cached_exponent)
    }

    /// Runs one batch: recomputes through `compute` when due, otherwise reuses
    /// the cached exponent. Returns the exponent and whether it was recomputed.
    pub fn step(&mut self, batch: u64, compute: impl FnOnce() -> u32) -> (u32, bool) {
        if self.should_recompute(batch) {
            let fresh = compute();
            self.observe(fresh, batch);
            (fresh, true)
        } else {
            self.skip();
            (
                self.cached_exponent.expect("cached after first recompute"),
                false,
            )
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRow {
    pub batch: u64,
    pub layer: usize,
    pub site: String,
    pub recompute: bool,
    pub exponent: u32,
}

/// Per-batch, per-site controller decisions.
#[derive(Clone, Debug, Default)]
pub struct RescaleTrace {
    pub rows: Vec<TraceRow>,
}

impl RescaleTrace {
    pub fn push(&mut self, row: TraceRow) {
        self.rows.push(row);
    }

    pub fn recompute_count(&self) -> usize {
        self.rows.iter().filter(|r| r.recompute).count()
    }

    /// CSV with header `batch,layer,site,recompute,exponent`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for row in &self.rows {
            wr.serialize(row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qtensor::{compute_scale_exponent, downscale, AccumTensor};

    fn cfg(warmup: u64) -> RescaleConfig {
        RescaleConfig {
            warmup_batches: warmup,
            history: 4,
        }
    }

    #[test]
    fn warmup_always_recomputes() {
        let mut st = RescaleState::new(0, "act", cfg(10));
        for b in 0..10 {
            assert!(st.should_recompute(b));
            st.observe(5, b);
        }
    }

    #[test]
    fn counter_arithmetic() {
        let mut st = RescaleState::new(0, "act", cfg(0));
        st.observe(3, 0);
        st.period = 5;
        st.skip();
        st.skip();
        // last recompute three batches ago
        assert!(!st.should_recompute(3));
        st.skip();
        st.skip();
        assert!(st.should_recompute(5));
    }

    #[test]
    fn unchanged_exponent_keeps_state() {
        let mut st = RescaleState::new(0, "act", cfg(0));
        st.observe(3, 0);
        st.observe(4, 20);
        let (period, intervals): (u64, Vec<u64>) = (st.period(), st.change_intervals().collect());
        st.observe(4, 30);
        assert_eq!(st.period(), period);
        assert_eq!(st.change_intervals().collect::<Vec<_>>(), intervals);
    }

    #[test]
    fn period_is_half_mean_interval() {
        let mut st = RescaleState::new(0, "act", cfg(0));
        st.observe(3, 0);
        st.observe(4, 20);
        st.observe(3, 40);
        st.observe(4, 60);
        assert_eq!(st.change_intervals().collect::<Vec<_>>(), vec![20, 20, 20]);
        assert_eq!(st.period(), 10);
    }

    #[test]
    fn period_never_below_one() {
        let mut st = RescaleState::new(0, "act", cfg(1));
        st.observe(3, 0);
        st.observe(4, 1);
        assert_eq!(st.period(), 1);
    }

    #[test]
    fn large_jump_reenters_warmup() {
        let mut st = RescaleState::new(0, "act", cfg(5));
        st.observe(3, 0);
        st.observe(4, 20);
        st.observe(3, 40);
        assert!(st.period() > 1);
        st.observe(6, 60);
        assert_eq!(st.period(), 1);
        assert!(st.in_warmup(64));
        assert!(!st.in_warmup(65));
    }

    #[test]
    fn converges_to_half_change_interval() {
        // True exponent flips every 20 batches.
        let mut st = RescaleState::new(0, "act", cfg(50));
        for b in 0..600u64 {
            let truth = 10 + ((b / 20) % 2) as u32;
            st.step(b, || truth);
        }
        assert_eq!(st.period(), 10);
    }

    #[test]
    fn effective_exponent_replay() {
        // Replay oracle: the emitted exponent equals the fresh value on recompute
        // batches and the most recent fresh value otherwise.
        let mut st = RescaleState::new(0, "act", cfg(4));
        let truth = |b: u64| 7 + ((b / 13) % 2) as u32;
        let mut last_fresh = None;
        for b in 0..200 {
            let recompute = st.should_recompute(b);
            let fresh = recompute.then(|| truth(b));
            if let Some(f) = fresh {
                st.observe(f, b);
                last_fresh = Some(f);
            } else {
                st.skip();
            }
            assert_eq!(st.effective_exponent(fresh), last_fresh);
        }
        assert_eq!(st.effective_exponent(Some(1)), Some(1));
    }

    #[test]
    fn stale_exponent_saturates_not_wraps() {
        let t = AccumTensor::new(vec![40_000, -40_000, 300], vec![3], 0).unwrap();
        let truth = compute_scale_exponent(&t);
        let stale = truth - 3;
        let q = downscale(&t, stale).unwrap();
        assert_eq!(&q.data()[..2], &[127, -127]);
    }

    #[test]
    fn trace_csv_header() {
        let mut trace = RescaleTrace::default();
        trace.push(TraceRow {
            batch: 0,
            layer: 1,
            site: "act".into(),
            recompute: true,
            exponent: 9,
        });
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "batch,layer,site,recompute,exponent\n0,1,act,true,9\n"
        );
    }
}
