//! Checkpoints: a tagged container of tensor records plus JSON state.
//!
//! Layout: `MPCK`, `u16` version, `u32` metadata length, metadata JSON, then
//! one tensor record per INT8 weight followed by one per FP32 master.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qtensor::io::{read_record, write_record, TensorRecord};
use crate::rescale::RescaleState;
use crate::translator::NodeId;

use super::params::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MPCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Meta {
    batches_done: u64,
    weights: usize,
    masters: bool,
    rescale: BTreeMap<NodeId, RescaleState>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub rescale: BTreeMap<NodeId, RescaleState>,
    pub batches_done: u64,
}

impl Checkpoint {
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let meta = Meta {
            batches_done: self.batches_done,
            weights: self.params.weights.len(),
            masters: self.params.masters.is_some(),
            rescale: self.rescale.clone(),
        };
        let json = serde_json::to_vec(&meta).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for q in &self.params.weights {
            write_record(&mut w, &TensorRecord::I8(q.clone()))?;
        }
        for m in self.params.masters.iter().flatten() {
            write_record(&mut w, &TensorRecord::F32(m.clone()))?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 10];
        r.read_exact(&mut head)
            .map_err(|_| Error::Format("checkpoint shorter than its header".into()))?;
        if &head[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = u16::from_le_bytes([head[4], head[5]]);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let len = u32::from_le_bytes([head[6], head[7], head[8], head[9]]) as usize;
        if len > 1 << 26 {
            return Err(Error::Format("checkpoint metadata too large".into()));
        }
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)
            .map_err(|_| Error::Format("truncated checkpoint metadata".into()))?;
        let meta: Meta = serde_json::from_slice(&json).map_err(|e| Error::Format(e.to_string()))?;
        let mut weights = Vec::with_capacity(meta.weights);
        for _ in 0..meta.weights {
            match read_record(&mut r)? {
                TensorRecord::I8(q) => weights.push(q),
                _ => return Err(Error::Format("expected an INT8 weight record".into())),
            }
        }
        let masters = if meta.masters {
            let mut m = Vec::with_capacity(meta.weights);
            for _ in 0..meta.weights {
                match read_record(&mut r)? {
                    TensorRecord::F32(t) => m.push(t),
                    _ => return Err(Error::Format("expected an FP32 master record".into())),
                }
            }
            Some(m)
        } else {
            None
        };
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint",
                rest.len()
            )));
        }
        Ok(Self {
            params: ParamStore { weights, masters },
            rescale: meta.rescale,
            batches_done: meta.batches_done,
        })
    }
}
