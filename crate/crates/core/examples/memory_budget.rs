//! Keep subgraph buffers under a byte budget, releasing the most recently
//! used ones first, and compare with the exhaustive minimum.

use mptrain::memplan::oracle::min_deallocations;
use mptrain::memplan::{prepare_catalog, BudgetState};

fn main() -> mptrain::Result<()> {
    let subgraphs = vec![vec![40, 24], vec![30], vec![16, 16, 8], vec![50]];
    let total: u64 = subgraphs.iter().flatten().sum();
    let cat = prepare_catalog(&subgraphs, total * 6 / 10)?;
    let sequence = [0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 2, 3];

    let mut st = BudgetState::new(&cat);
    for &sg in &sequence {
        st.ensure_resident(sg, &cat)?;
    }
    st.write_trace_csv(std::io::stdout())?;
    println!(
        "budget {} of {total} bytes: {} releases, oracle minimum {}",
        cat.budget,
        st.deallocations(),
        min_deallocations(&cat, &sequence)?
    );
    Ok(())
}
