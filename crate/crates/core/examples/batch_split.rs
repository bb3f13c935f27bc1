//! Abnormality detection and micro-batch planning on the seeded DSP conv
//! latencies.

use mptrain::backend::CostModel;
use mptrain::batchsplit::{detect_abnormal, plan_split, DEFAULT_THETA};

fn main() -> mptrain::Result<()> {
    let table = CostModel::seeded().dsp_latency_table();
    for hw in ["8x8", "16x16", "32x32"] {
        let sig = format!("conv3x3_c64_64_{hw}");
        let flags: Vec<String> = table
            .batches(&sig)
            .into_iter()
            .filter(|&b| b > 4)
            .map(|b| {
                let bad = detect_abnormal(&table, &sig, b, 4, DEFAULT_THETA).unwrap_or(false);
                format!("{b}{}", if bad { "!" } else { "" })
            })
            .collect();
        let plan = plan_split(&table, &sig, 32, DEFAULT_THETA)?;
        println!(
            "{sig:22} batches {:28} batch 32 -> {} x {}",
            flags.join(" "),
            plan.num_micro,
            plan.micro_batch
        );
    }
    Ok(())
}
