//! The self-adaptive rescale controller on a trace whose exponent flips
//! every 10 to 60 batches.

use mptrain::rescale::{RescaleConfig, RescaleState};
use mptrain::runtime::ExponentTrace;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let batches = 2000;
    let trace = ExponentTrace::generate(batches, 9, 10, 60, &mut ChaCha8Rng::seed_from_u64(4));
    let mut site = RescaleState::new(0, "conv0", RescaleConfig::default());
    let mut worst = 0;
    for b in 0..batches {
        let (e, _) = site.step(b as u64, || trace.at(b));
        worst = worst.max(e.abs_diff(trace.at(b)));
    }
    println!(
        "recomputed {} of {batches} batches ({:.1}%), final period {}, worst error {worst}",
        site.recomputes(),
        100.0 * site.recomputes() as f64 / batches as f64,
        site.period()
    );
}
