//! Batch splitting.
//!
//! Large batches can exhaust the accelerator's data cache, at which point an
//! operator's latency per FLOP jumps well above its value at a smaller batch.
//! Such "abnormal" operators are run as several micro-batches whose INT32
//! weight gradients are accumulated at a unified exponent.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qtensor::{
    check_exponent, compute_scale_exponent, round_shift, saturate_i8, shift_for_magnitude,
    AccumTensor, QuantTensor,
};

/// Per-FLOP latency ratio above which an operator counts as abnormal.
pub const DEFAULT_THETA: f64 = 1.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub op_signature: String,
    pub batch: usize,
    pub latency_ms: f64,
    pub flops: u64,
}

/// Profiled latency grid keyed by operator signature and batch size.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LatencyTable {
    rows: BTreeMap<String, BTreeMap<usize, (f64, u64)>>,
}

impl LatencyTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, sig: &str, batch: usize, latency_ms: f64, flops: u64) -> Result<()> {
        if batch == 0 {
            return Err(Error::Profile(format!(
                "{sig}: batch size must be positive"
            )));
        }
        if !latency_ms.is_finite() || latency_ms < 0.0 {
            return Err(Error::Profile(format!(
                "{sig} @ {batch}: latency must be finite and non-negative, got {latency_ms}"
            )));
        }
        if flops == 0 {
            return Err(Error::Profile(format!("{sig} @ {batch}: zero flops")));
        }
        self.rows
            .entry(sig.to_string())
            .or_default()
            .insert(batch, (latency_ms, flops));
        Ok(())
    }

    pub fn contains(&self, sig: &str) -> bool {
        self.rows.contains_key(sig)
    }

    pub fn signatures(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn batches(&self, sig: &str) -> Vec<usize> {
        self.rows
            .get(sig)
            .map(|m| m.keys().copied().collect())
            .unwrap_or_default()
    }

    pub fn get(&self, sig: &str, batch: usize) -> Result<(f64, u64)> {
        self.rows
            .get(sig)
            .and_then(|m| m.get(&batch))
            .copied()
            .ok_or_else(|| Error::Profile(format!("no profile row for {sig} at batch {batch}")))
    }

    pub fn per_flop(&self, sig: &str, batch: usize) -> Result<f64> {
        let (l, f) = self.get(sig, batch)?;
        Ok(l / f as f64)
    }

    /// CSV with header `op_signature,batch,latency_ms,flops`.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(r);
        let mut t = Self::new();
        for (i, row) in rd.deserialize::<LatencyRow>().enumerate() {
            let row = row.map_err(|e| Error::Profile(format!("row {}: {e}", i + 2)))?;
            t.insert(&row.op_signature, row.batch, row.latency_ms, row.flops)?;
        }
        Ok(t)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for (sig, m) in &self.rows {
            for (&batch, &(latency_ms, flops)) in m {
                wr.serialize(LatencyRow {
                    op_signature: sig.clone(),
                    batch,
                    latency_ms,
                    flops,
                })?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// True iff latency per FLOP at `batch` exceeds `theta` times that at `ref_batch`.
pub fn detect_abnormal(
    t: &LatencyTable,
    sig: &str,
    batch: usize,
    ref_batch: usize,
    theta: f64,
) -> Result<bool> {
    Ok(t.per_flop(sig, batch)? > theta * t.per_flop(sig, ref_batch)?)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub op_signature: String,
    pub batch: usize,
    pub micro_batch: usize,
    pub num_micro: usize,
}

impl SplitPlan {
    pub fn unsplit(sig: &str, batch: usize) -> Self {
        Self {
            op_signature: sig.to_string(),
            batch,
            micro_batch: batch,
            num_micro: 1,
        }
    }

    pub fn is_split(&self) -> bool {
        self.num_micro > 1
    }

    /// `(start, len)` of every micro-batch; the last may be short.
    pub fn ranges(&self) -> Vec<(usize, usize)> {
        (0..self.num_micro)
            .map(|i| {
                let start = i * self.micro_batch;
                (start, self.micro_batch.min(self.batch - start))
            })
            .collect()
    }
}

/// Chooses the largest profiled batch size (not above `batch`) whose latency
/// per FLOP stays within `theta` of the best profiled size.
pub fn plan_split(t: &LatencyTable, sig: &str, batch: usize, theta: f64) -> Result<SplitPlan> {
    if batch == 0 {
        return Err(Error::InvalidArgument("batch must be positive".into()));
    }
    let sizes: Vec<usize> = t.batches(sig).into_iter().filter(|&b| b <= batch).collect();
    if sizes.is_empty() {
        return Err(Error::Profile(format!(
            "no profiled size of {sig} at or below batch {batch}"
        )));
    }
    let mut best = f64::INFINITY;
    for &b in &sizes {
        best = best.min(t.per_flop(sig, b)?);
    }
    let mut micro = sizes[0];
    for &b in &sizes {
        if t.per_flop(sig, b)? <= theta * best {
            micro = b;
        }
    }
    Ok(SplitPlan {
        op_signature: sig.to_string(),
        batch,
        micro_batch: micro,
        num_micro: batch.div_ceil(micro),
    })
}

/// Integer accumulation of micro-batch weight gradients.
///
/// Each part's own exponent `s_i` is computed; the parts are summed exactly in
/// 64-bit integers and the sum is shifted once by `max(S, s_sum)` where
/// `S = max_i s_i` and `s_sum` is the shift the sum itself needs. When every
/// part shares the unsplit exponent the result equals the unsplit gradient.
pub fn accumulate_weight_grads(parts: &[AccumTensor]) -> Result<QuantTensor> {
    let (sum, floor) = sum_parts(parts)?;
    let first = &parts[0];
    finish_sum(&sum, first.shape().to_vec(), first.exponent(), floor)
}

/// Exact sum of the parts plus the unified exponent `S = max_i s_i`.
pub fn sum_parts(parts: &[AccumTensor]) -> Result<(Vec<i64>, u32)> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("no gradient parts to accumulate".into()))?;
    let mut sum = vec![0i64; first.len()];
    let mut unified = 0u32;
    for p in parts {
        if p.shape() != first.shape() {
            return Err(Error::InvalidArgument(format!(
                "gradient part shape {:?} differs from {:?}",
                p.shape(),
                first.shape()
            )));
        }
        if p.exponent() != first.exponent() {
            return Err(Error::InvalidArgument(format!(
                "gradient part exponent {} differs from {}",
                p.exponent(),
                first.exponent()
            )));
        }
        unified = unified.max(compute_scale_exponent(p));
        for (s, &v) in sum.iter_mut().zip(p.data()) {
            *s += v as i64;
        }
    }
    Ok((sum, unified))
}

/// Downscales an exact wide sum, shifting by at least `floor`.
pub fn finish_sum(
    sum: &[i64],
    shape: Vec<usize>,
    exponent: i32,
    floor: u32,
) -> Result<QuantTensor> {
    let max = sum.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0);
    let s = floor.max(shift_for_magnitude(max));
    let e = check_exponent(exponent as i64 + s as i64)?;
    let data = sum
        .iter()
        .map(|&v| saturate_i8(round_shift(v, s)))
        .collect();
    QuantTensor::new(data, shape, e)
}
