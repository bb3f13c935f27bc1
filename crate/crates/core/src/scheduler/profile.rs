use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{OpId, Processor};
use crate::error::{Error, Result};

/// Measured latencies of one operator on both processors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpProfile {
    pub op_id: OpId,
    pub latency_cpu_ms: f64,
    /// `inf` when the accelerator cannot run the operator.
    pub latency_dsp_ms: f64,
    pub flops: u64,
}

impl OpProfile {
    pub fn new(op_id: OpId, latency_cpu_ms: f64, latency_dsp_ms: f64, flops: u64) -> Result<Self> {
        let p = Self {
            op_id,
            latency_cpu_ms,
            latency_dsp_ms,
            flops,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("cpu", self.latency_cpu_ms), ("dsp", self.latency_dsp_ms)] {
            if v.is_nan() || v < 0.0 {
                return Err(Error::Profile(format!(
                    "op {}: {name} latency must be non-negative, got {v}",
                    self.op_id
                )));
            }
        }
        if self.latency_cpu_ms.is_infinite() && self.latency_dsp_ms.is_infinite() {
            return Err(Error::Profile(format!(
                "op {}: runnable on neither processor",
                self.op_id
            )));
        }
        Ok(())
    }

    pub fn latency(&self, p: Processor) -> f64 {
        match p {
            Processor::Cpu => self.latency_cpu_ms,
            Processor::Dsp => self.latency_dsp_ms,
        }
    }

    pub fn dsp_supported(&self) -> bool {
        self.latency_dsp_ms.is_finite()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProfileSet {
    map: BTreeMap<OpId, OpProfile>,
}

impl ProfileSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Profiles for ops `0..n` from `(cpu, dsp)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        let mut set = Self::new();
        for (i, &(c, d)) in pairs.iter().enumerate() {
            set.insert(OpProfile::new(i as OpId, c, d, 0)?)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, p: OpProfile) -> Result<()> {
        p.validate()?;
        self.map.insert(p.op_id, p);
        Ok(())
    }

    pub fn get(&self, op: OpId) -> Result<&OpProfile> {
        self.map
            .get(&op)
            .ok_or_else(|| Error::Schedule(format!("no profile for op {op}")))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &OpProfile> {
        self.map.values()
    }

    /// CSV with header `op_id,latency_cpu_ms,latency_dsp_ms,flops`.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(r);
        let mut set = Self::new();
        for (line, row) in rd.deserialize::<OpProfile>().enumerate() {
            let p = row.map_err(|e| Error::Profile(format!("row {}: {e}", line + 2)))?;
            if set.map.contains_key(&p.op_id) {
                return Err(Error::Profile(format!("duplicate op_id {}", p.op_id)));
            }
            set.insert(p)?;
        }
        Ok(set)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for p in self.map.values() {
            wr.serialize(p)?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_accepts_inf() {
        let text = "op_id,latency_cpu_ms,latency_dsp_ms,flops\n0,3,25,10\n1, 2.5 ,inf,0\n";
        let set = ProfileSet::read_csv(text.as_bytes()).unwrap();
        assert_eq!(set.len(), 2);
        assert!(!set.get(1).unwrap().dsp_supported());
        let mut out = Vec::new();
        set.write_csv(&mut out).unwrap();
        let again = ProfileSet::read_csv(out.as_slice()).unwrap();
        assert_eq!(again, set);
    }

    #[test]
    fn rejects_negative_and_doubly_unsupported() {
        assert!(matches!(
            OpProfile::new(0, -1.0, 2.0, 0),
            Err(Error::Profile(_))
        ));
        assert!(matches!(
            OpProfile::new(0, f64::INFINITY, f64::INFINITY, 0),
            Err(Error::Profile(_))
        ));
        let text = "op_id,latency_cpu_ms,latency_dsp_ms,flops\n0,x,1,0\n";
        assert!(matches!(
            ProfileSet::read_csv(text.as_bytes()),
            Err(Error::Profile(_))
        ));
    }

    #[test]
    fn missing_profile_is_schedule_error() {
        let set = ProfileSet::from_pairs(&[(1.0, 1.0)]).unwrap();
        assert!(matches!(set.get(4), Err(Error::Schedule(_))));
    }
}
