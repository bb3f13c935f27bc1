//! Translate the toy CNN under the NITI config, print its operator counts
//! and round-trip the intermediate file.

use std::collections::BTreeMap;

use mptrain::translator::{load_intermediate, niti, serialize_intermediate, toy_cnn, translate};

fn main() -> mptrain::Result<()> {
    let graph = translate(&toy_cnn(), &niti())?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for n in &graph.nodes {
        *counts.entry(n.kind.name()).or_default() += 1;
    }
    for (kind, n) in &counts {
        println!("{kind:28} {n}");
    }

    let bytes = serialize_intermediate(&graph);
    let back = load_intermediate(&bytes)?;
    assert_eq!(back, graph);
    println!(
        "{} nodes, {} bytes serialized",
        graph.nodes.len(),
        bytes.len()
    );
    Ok(())
}
