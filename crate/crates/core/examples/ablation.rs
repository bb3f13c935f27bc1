//! Simulated per-batch latency of a VGG-like model as rescaling, subgraph
//! reuse, batch splitting and co-scheduling are switched on one by one.

use mptrain::backend::CostModel;
use mptrain::runtime::{ablation, PlanOptions};
use mptrain::translator::{niti, translate, vgg_like};

fn main() -> mptrain::Result<()> {
    let graph = translate(&vgg_like(), &niti())?;
    let steps = ablation(&graph, &CostModel::seeded(), &PlanOptions::new(32), 300, 1)?;
    let base = steps[0].1;
    for (label, ms) in &steps {
        println!("{label:32} {ms:8.2} ms  {:5.2}x", base / ms);
    }
    Ok(())
}
