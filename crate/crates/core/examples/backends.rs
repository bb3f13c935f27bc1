//! Run the forward subgraph of the toy CNN on the host and on the simulated
//! DSP: identical tensors, different modelled time.

use std::collections::BTreeMap;

use mptrain::backend::{
    execute_subgraph, latency_map, BackendDescriptor, CostModel, ExecContext, PerBatchRescale,
};
use mptrain::qtensor::quantize;
use mptrain::runtime::{gen_images, ParamStore};
use mptrain::scheduler::{Processor, Subgraph};
use mptrain::translator::{niti, toy_cnn, translate, OpKind, Phase};

fn main() -> mptrain::Result<()> {
    let graph = translate(&toy_cnn(), &niti())?;
    let params = ParamStore::init(&graph, 7)?;
    let data = gen_images(8, 8, 10, 0.5, 1)?;
    let (x, labels) = data.gather(&(0..8).collect::<Vec<_>>())?;
    let lat = latency_map(&graph, &CostModel::seeded(), 8);

    // Quantize runs on the host; everything else forward is integer.
    let fwd: Vec<u32> = graph
        .nodes
        .iter()
        .filter(|n| {
            n.phase == Phase::Fwd
                && n.kind != OpKind::Quantize
                && n.kind != OpKind::SoftmaxCrossEntropy
        })
        .map(|n| n.id)
        .collect();
    let mut outputs = Vec::new();
    for p in [Processor::Cpu, Processor::Dsp] {
        let splits = BTreeMap::new();
        let mut scales = PerBatchRescale;
        let mut ctx = ExecContext {
            graph: &graph,
            input: &x,
            labels: &labels,
            weights: &params.weights,
            masters: None,
            splits: &splits,
            scales: &mut scales,
            values: BTreeMap::new(),
            updates: BTreeMap::new(),
            recomputed: Vec::new(),
        };
        ctx.values
            .insert(0, mptrain::backend::Value::Quant(quantize(&x)?));
        let sg = Subgraph {
            id: 0,
            processor: p,
            ops: fwd.clone(),
        };
        let backend = BackendDescriptor::for_processor(p);
        let ms = execute_subgraph(&backend, &sg, &mut ctx, &lat)?;
        let logits = ctx.values[fwd.last().unwrap()].quant().cloned().unwrap();
        println!("{:8} {ms:8.3} ms", backend.name);
        outputs.push(logits);
    }
    println!("bit-identical logits: {}", outputs[0] == outputs[1]);
    Ok(())
}
