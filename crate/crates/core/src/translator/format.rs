use serde::{Deserialize, Serialize};

use super::config::{Initializer, NumericType};
use super::graph::{Node, ParamSpec, TrainGraph};
use crate::error::{Error, Result};
use crate::rescale::RescaleConfig;

pub const MAGIC: &[u8; 4] = b"MPIM";
pub const FORMAT_VERSION: u16 = 1;

/// Everything except the node list.
#[derive(Serialize, Deserialize)]
struct Header {
    name: String,
    algorithm: String,
    input_shape: Vec<usize>,
    classes: usize,
    params: Vec<ParamSpec>,
    loss: u32,
    weight_type: NumericType,
    update: NumericType,
    initializer: Initializer,
    lr_shift: i32,
    lr: f32,
    rescale: RescaleConfig,
    node_count: u32,
}

fn push_record(out: &mut Vec<u8>, payload: &[u8]) {
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
}

/// `MPIM`, version (u16 LE), then a header record and one record per node,
/// each a u32 LE length followed by a JSON payload.
pub fn serialize_intermediate(g: &TrainGraph) -> Vec<u8> {
    let header = Header {
        name: g.name.clone(),
        algorithm: g.algorithm.clone(),
        input_shape: g.input_shape.clone(),
        classes: g.classes,
        params: g.params.clone(),
        loss: g.loss,
        weight_type: g.weight_type,
        update: g.update,
        initializer: g.initializer,
        lr_shift: g.lr_shift,
        lr: g.lr,
        rescale: g.rescale,
        node_count: g.nodes.len() as u32,
    };
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    push_record(
        &mut out,
        &serde_json::to_vec(&header).expect("header serializes"),
    );
    for n in &g.nodes {
        push_record(&mut out, &serde_json::to_vec(n).expect("node serializes"));
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn record<T: serde::de::DeserializeOwned>(&mut self, what: &str) -> Result<T> {
        let len = u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize;
        let payload = self.take(len)?;
        serde_json::from_slice(payload).map_err(|e| Error::Format(format!("{what}: {e}")))
    }
}

pub fn load_intermediate(bytes: &[u8]) -> Result<TrainGraph> {
    if bytes.is_empty() {
        return Err(Error::Format("empty intermediate model".into()));
    }
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format(
            "not an intermediate model (bad magic)".into(),
        ));
    }
    let version = u16::from_le_bytes(c.take(2)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "intermediate model version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let h: Header = c.record("header")?;
    let mut nodes = Vec::with_capacity(h.node_count.min(1 << 20) as usize);
    for i in 0..h.node_count {
        nodes.push(c.record::<Node>(&format!("node {i}"))?);
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes",
            bytes.len() - c.pos
        )));
    }
    let g = TrainGraph {
        name: h.name,
        algorithm: h.algorithm,
        input_shape: h.input_shape,
        classes: h.classes,
        params: h.params,
        nodes,
        loss: h.loss,
        weight_type: h.weight_type,
        update: h.update,
        initializer: h.initializer,
        lr_shift: h.lr_shift,
        lr: h.lr,
        rescale: h.rescale,
    };
    g.validate()
        .map_err(|e| Error::Format(format!("invalid graph: {e}")))?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::translator::config::{fp32_update, niti};
    use crate::translator::model::toy_cnn;
    use crate::translator::translate;

    #[test]
    fn round_trip_toy_graph() {
        for cfg in [niti(), fp32_update()] {
            let g = translate(&toy_cnn(), &cfg).unwrap();
            let bytes = serialize_intermediate(&g);
            assert_eq!(&bytes[..4], MAGIC);
            assert_eq!(load_intermediate(&bytes).unwrap(), g);
            assert_eq!(serialize_intermediate(&g), bytes);
        }
    }

    #[test]
    fn empty_and_bad_headers() {
        assert!(matches!(load_intermediate(&[]), Err(Error::Format(_))));
        let mut bytes = serialize_intermediate(&translate(&toy_cnn(), &niti()).unwrap());
        bytes[4] = 9;
        assert!(matches!(load_intermediate(&bytes), Err(Error::Format(_))));
        let good = serialize_intermediate(&translate(&toy_cnn(), &niti()).unwrap());
        assert!(matches!(
            load_intermediate(&good[..good.len() - 3]),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            load_intermediate(b"NOPE\x01\x00"),
            Err(Error::Format(_))
        ));
    }
}
