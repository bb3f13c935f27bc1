use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::batchsplit::LatencyTable;
use crate::error::{Error, Result};
use crate::translator::registry::CostClass;
use crate::translator::{Node, OpKind};

/// Seed grid: the 3x3, 64-channel convolution latencies on the DSP at
/// 8x8/16x16/32x32 inputs and batches 2..64, plus the slow-on-DSP layout
/// operators (batch 0 rows apply to every batch).
pub const SEEDED_CSV: &str = include_str!("../../assets/cost_model.csv");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub op_signature: String,
    /// 0 for batch-independent rows.
    pub batch: usize,
    pub latency_cpu_ms: f64,
    pub latency_dsp_ms: f64,
    pub flops: u64,
}

/// Throughputs used when no profiled row applies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticRates {
    pub cpu_flops_per_ms: f64,
    pub dsp_flops_per_ms: f64,
    pub cpu_bytes_per_ms: f64,
    pub dsp_bytes_per_ms: f64,
    pub cpu_float_elems_per_ms: f64,
    /// Per-operator launch cost on either processor.
    pub op_overhead_ms: f64,
}

impl Default for AnalyticRates {
    fn default() -> Self {
        Self {
            cpu_flops_per_ms: 1.5e7,
            dsp_flops_per_ms: 6.0e7,
            cpu_bytes_per_ms: 3.0e6,
            dsp_bytes_per_ms: 4.0e6,
            cpu_float_elems_per_ms: 1.0e6,
            op_overhead_ms: 0.01,
        }
    }
}

/// Latency lookup by operator signature and batch size.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CostModel {
    rows: BTreeMap<String, BTreeMap<usize, CostRow>>,
    pub rates: AnalyticRates,
}

impl CostModel {
    pub fn seeded() -> Self {
        Self::read_csv(SEEDED_CSV.as_bytes()).expect("seed table is valid")
    }

    pub fn insert(&mut self, row: CostRow) -> Result<()> {
        for (name, v) in [("cpu", row.latency_cpu_ms), ("dsp", row.latency_dsp_ms)] {
            if v.is_nan() || v < 0.0 {
                return Err(Error::Format(format!(
                    "{} @ {}: negative {name} latency {v}",
                    row.op_signature, row.batch
                )));
            }
        }
        self.rows
            .entry(row.op_signature.clone())
            .or_default()
            .insert(row.batch, row);
        Ok(())
    }

    /// CSV with header `op_signature,batch,latency_cpu_ms,latency_dsp_ms,flops`.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(r);
        let mut m = Self::default();
        for (i, row) in rd.deserialize::<CostRow>().enumerate() {
            let row = row.map_err(|e| Error::Format(format!("cost row {}: {e}", i + 2)))?;
            m.insert(row)?;
        }
        Ok(m)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for m in self.rows.values() {
            for row in m.values() {
                wr.serialize(row)?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn rows(&self) -> impl Iterator<Item = &CostRow> {
        self.rows.values().flat_map(|m| m.values())
    }

    /// Profiled `(cpu, dsp)` latency for a signature: the exact batch, else
    /// the nearest profiled batch scaled linearly in FLOPs (or in batch size
    /// when FLOPs are unknown), else a batch-independent row.
    pub fn lookup(&self, sig: &str, batch: usize, flops: u64) -> Option<(f64, f64)> {
        let m = self.rows.get(sig)?;
        if let Some(r) = m.get(&batch) {
            return Some((r.latency_cpu_ms, r.latency_dsp_ms));
        }
        let nearest = m.values().filter(|r| r.batch > 0).min_by(|a, b| {
            let da = (a.batch as f64 / batch.max(1) as f64).ln().abs();
            let db = (b.batch as f64 / batch.max(1) as f64).ln().abs();
            da.total_cmp(&db).then(a.batch.cmp(&b.batch))
        });
        if let (Some(r), true) = (nearest, batch > 0) {
            let ratio = if r.flops > 0 && flops > 0 {
                flops as f64 / r.flops as f64
            } else {
                batch as f64 / r.batch as f64
            };
            return Some((r.latency_cpu_ms * ratio, r.latency_dsp_ms * ratio));
        }
        m.get(&0).map(|r| (r.latency_cpu_ms, r.latency_dsp_ms))
    }

    /// `(cpu, dsp)` latency of a graph node at a batch size; DSP latency is
    /// infinite for operators the accelerator cannot run.
    pub fn node_latency(&self, node: &Node, batch: usize) -> (f64, f64) {
        let flops = node.flops(batch);
        let (cpu, dsp) = self
            .lookup(&node.signature, batch, flops)
            .or_else(|| self.lookup(node.kind.name(), batch, flops))
            .unwrap_or_else(|| self.analytic(node.kind, flops));
        let dsp = if node.dsp_supported {
            dsp
        } else {
            f64::INFINITY
        };
        (cpu, dsp)
    }

    pub fn analytic(&self, kind: OpKind, work: u64) -> (f64, f64) {
        let r = &self.rates;
        let w = work as f64;
        let (cpu, dsp) = match kind.cost_class() {
            CostClass::Compute => (w / r.cpu_flops_per_ms, w / r.dsp_flops_per_ms),
            CostClass::Memory => {
                let bytes = match kind {
                    OpKind::ReduceMaxScale | OpKind::Shift => 4.0 * w,
                    _ => w,
                };
                (bytes / r.cpu_bytes_per_ms, bytes / r.dsp_bytes_per_ms)
            }
            CostClass::Float => (w / r.cpu_float_elems_per_ms, f64::INFINITY),
        };
        (cpu + r.op_overhead_ms, dsp + r.op_overhead_ms)
    }

    /// DSP latencies of every batched row, for abnormality detection.
    pub fn dsp_latency_table(&self) -> LatencyTable {
        let mut t = LatencyTable::new();
        for r in self.rows() {
            if r.batch > 0 && r.flops > 0 && r.latency_dsp_ms.is_finite() {
                t.insert(&r.op_signature, r.batch, r.latency_dsp_ms, r.flops)
                    .expect("validated rows");
            }
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_table_lookups() {
        let m = CostModel::seeded();
        assert_eq!(m.lookup("conv3x3_c64_64_32x32", 32, 0).unwrap().1, 68.13);
        assert_eq!(m.lookup("conv3x3_c64_64_8x8", 4, 0).unwrap().1, 0.63);
        assert_eq!(m.lookup("Transpose", 16, 0).unwrap(), (3.0, 25.0));
        assert_eq!(m.lookup("WeightRotate", 1, 0).unwrap(), (4.0, 20.0));
        assert_eq!(m.lookup("Slice", 7, 0).unwrap(), (4.0, 17.0));
    }

    #[test]
    fn missing_batch_interpolates_in_flops() {
        let m = CostModel::seeded();
        // batch 40 is nearest to 32 on a log scale
        let row32 = 2 * 9 * 64 * 64 * 1024 * 32u64;
        let flops40 = row32 / 32 * 40;
        let (_, dsp) = m.lookup("conv3x3_c64_64_32x32", 40, flops40).unwrap();
        assert!((dsp - 68.13 * 1.25).abs() < 1e-9);
        // batch 3 sits between 2 and 4; log distance favours 4
        let (_, dsp) = m.lookup("conv3x3_c64_64_8x8", 3, 0).unwrap();
        assert!((dsp - 0.63 * 0.75).abs() < 1e-12);
    }

    #[test]
    fn negative_row_is_format_error() {
        let text = "op_signature,batch,latency_cpu_ms,latency_dsp_ms,flops\nx,1,-2,1,0\n";
        assert!(matches!(
            CostModel::read_csv(text.as_bytes()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let m = CostModel::seeded();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(CostModel::read_csv(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn float_ops_never_on_dsp() {
        let m = CostModel::default();
        assert!(m.analytic(OpKind::Quantize, 100).1.is_infinite());
        assert!(m.analytic(OpKind::Int8Conv, 100).1.is_finite());
    }
}
