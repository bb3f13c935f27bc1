//! Train the toy CNN with INT8 NITI-style updates on noisy synthetic 8x8
//! images and compare with FP32 training from the same initial weights.

use mptrain::runtime::{gen_images, run_reference, run_training, TrainRunConfig};
use mptrain::translator::{niti, toy_cnn};

fn main() -> mptrain::Result<()> {
    let data = gen_images(1200, 8, 10, 1.2, 3)?;
    let (train, test) = data.split_at(1000)?;
    let mut cfg = TrainRunConfig::new(toy_cnn(), niti());
    cfg.epochs = 5;
    cfg.seed = 1;

    let out = run_training(&cfg, &train, Some(&test))?;
    for m in out.metrics.iter().step_by(31) {
        println!(
            "batch {:3}  loss {:.3}  acc {:.2}  {:.2} ms",
            m.batch, m.loss, m.train_acc, m.sim_ms
        );
    }
    let (_, fp32) = run_reference(&cfg, 0.01, &train, Some(&test))?;
    println!(
        "test accuracy: int8 {:.3}, fp32 {:.3}",
        out.summary.test_accuracy.unwrap_or(0.0),
        fp32.unwrap_or(0.0)
    );
    Ok(())
}
