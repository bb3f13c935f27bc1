//! Place a chain of operators on CPU and DSP with a 25 ms switch cost.
//!
//! The three slow-on-DSP layout operators sit between accelerator-friendly
//! convolutions; moving each one to the CPU saves less than the two switches
//! it would cost, so the optimal placement keeps them on the DSP.

use mptrain::scheduler::{
    schedule_bruteforce, schedule_dp, schedule_greedy, ProfileSet, SwitchCost,
};

fn main() -> mptrain::Result<()> {
    let lat = [
        (30.0, 6.0),
        (3.0, 25.0), // Transpose
        (28.0, 5.0),
        (4.0, 20.0), // WeightRotate
        (4.0, 17.0), // Slice
        (33.0, 7.0),
        (2.0, 1.0),
    ];
    let profiles = ProfileSet::from_pairs(&lat)?;
    let order: Vec<u32> = (0..lat.len() as u32).collect();
    let switch = SwitchCost::default();

    let dp = schedule_dp(&order, &profiles, switch)?;
    let brute = schedule_bruteforce(&order, &profiles, switch)?;
    let greedy = schedule_greedy(&order, &profiles, switch)?;
    println!(
        "dp     {:?} {:.1} ms, {} switches",
        dp.assignment, dp.total_latency, dp.switch_count
    );
    println!("brute  {:.1} ms", brute.total_latency);
    println!(
        "greedy {:?} {:.1} ms",
        greedy.assignment, greedy.total_latency
    );
    Ok(())
}
