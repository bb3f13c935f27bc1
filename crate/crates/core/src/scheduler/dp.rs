use super::{OpId, Processor, ProfileSet, Schedule, SwitchCost};
use crate::error::{Error, Result};

const PROCS: [Processor; 2] = [Processor::Cpu, Processor::Dsp];

fn latencies(seq: &[OpId], profiles: &ProfileSet) -> Result<Vec<[f64; 2]>> {
    seq.iter()
        .map(|&op| {
            let p = profiles.get(op)?;
            Ok([p.latency_cpu_ms, p.latency_dsp_ms])
        })
        .collect()
}

fn count_switches(assignment: &[Processor]) -> usize {
    assignment.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Sequential latency of a placement: operator latencies in order plus one
/// switch for every processor change.
pub fn sequential_cost(
    seq: &[OpId],
    assignment: &[Processor],
    profiles: &ProfileSet,
    switch: SwitchCost,
) -> Result<f64> {
    if seq.len() != assignment.len() {
        return Err(Error::InvalidArgument(format!(
            "{} ops but {} placements",
            seq.len(),
            assignment.len()
        )));
    }
    let lat = latencies(seq, profiles)?;
    Ok(cost_of(&lat, assignment, switch.latency))
}

fn cost_of(lat: &[[f64; 2]], assignment: &[Processor], sw: f64) -> f64 {
    let mut total = 0.0;
    for (i, &p) in assignment.iter().enumerate() {
        if i > 0 && assignment[i - 1] != p {
            total += sw;
        }
        total += lat[i][p as usize];
    }
    total
}

fn finish(seq: &[OpId], assignment: Vec<Processor>, total: f64) -> Result<Schedule> {
    if !total.is_finite() {
        return Err(Error::Schedule("no feasible placement".into()));
    }
    Ok(Schedule {
        order: seq.to_vec(),
        switch_count: count_switches(&assignment),
        assignment,
        total_latency: total,
    })
}

/// Optimal placement over a fixed order by the two-state recurrence
/// `T[i+1,p] = min(T[i,p], T[i,q] + L_switch) + L_{i+1}^p`.
/// Ties prefer CPU, both for predecessors and for the final state.
pub fn schedule_dp(seq: &[OpId], profiles: &ProfileSet, switch: SwitchCost) -> Result<Schedule> {
    let n = seq.len();
    if n == 0 {
        return finish(seq, Vec::new(), 0.0);
    }
    let lat = latencies(seq, profiles)?;
    let sw = switch.latency;
    let mut t = vec![[f64::INFINITY; 2]; n];
    let mut from = vec![[0usize; 2]; n];
    t[0] = lat[0];
    for i in 1..n {
        for p in 0..2 {
            let via = |q: usize| {
                if q == p {
                    t[i - 1][q]
                } else {
                    t[i - 1][q] + sw
                }
            };
            let (best_q, best) = if via(1) < via(0) {
                (1, via(1))
            } else {
                (0, via(0))
            };
            t[i][p] = best + lat[i][p];
            from[i][p] = best_q;
        }
    }
    let mut p = if t[n - 1][1] < t[n - 1][0] { 1 } else { 0 };
    let total = t[n - 1][p];
    let mut assignment = vec![Processor::Cpu; n];
    for i in (0..n).rev() {
        assignment[i] = PROCS[p];
        p = from[i][p];
    }
    finish(seq, assignment, total)
}

/// Exhaustive search over all `2^N` placements, `N <= 20`.
pub fn schedule_bruteforce(
    seq: &[OpId],
    profiles: &ProfileSet,
    switch: SwitchCost,
) -> Result<Schedule> {
    let n = seq.len();
    if n > 20 {
        return Err(Error::InvalidArgument(format!(
            "brute force limited to 20 ops, got {n}"
        )));
    }
    let lat = latencies(seq, profiles)?;
    let mut best: Option<(f64, u32)> = None;
    let mut assignment = vec![Processor::Cpu; n];
    for mask in 0u32..(1 << n) {
        for (i, a) in assignment.iter_mut().enumerate() {
            *a = PROCS[(mask >> i & 1) as usize];
        }
        let c = cost_of(&lat, &assignment, switch.latency);
        if best.is_none_or(|(b, _)| c < b) {
            best = Some((c, mask));
        }
    }
    let (total, mask) = best.expect("at least the empty placement");
    let assignment = (0..n).map(|i| PROCS[(mask >> i & 1) as usize]).collect();
    finish(seq, assignment, total)
}

/// Per-operator fastest processor, ignoring switch costs when placing
/// (they are still charged in the total). Ties prefer CPU.
pub fn schedule_greedy(
    seq: &[OpId],
    profiles: &ProfileSet,
    switch: SwitchCost,
) -> Result<Schedule> {
    let lat = latencies(seq, profiles)?;
    let assignment: Vec<Processor> = lat
        .iter()
        .map(|l| {
            if l[1] < l[0] {
                Processor::Dsp
            } else {
                Processor::Cpu
            }
        })
        .collect();
    let total = cost_of(&lat, &assignment, switch.latency);
    finish(seq, assignment, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Processor::{Cpu, Dsp};

    fn sw(v: f64) -> SwitchCost {
        SwitchCost::new(v).unwrap()
    }

    #[test]
    fn two_ops_high_switch_stays_on_cpu() {
        let prof = ProfileSet::from_pairs(&[(10.0, 2.0), (3.0, 25.0)]).unwrap();
        let s = schedule_dp(&[0, 1], &prof, sw(25.0)).unwrap();
        assert_eq!(s.assignment, vec![Cpu, Cpu]);
        assert_eq!(s.total_latency, 13.0);
        assert_eq!(s.switch_count, 0);
    }

    #[test]
    fn two_ops_cheap_switch_splits() {
        let prof = ProfileSet::from_pairs(&[(10.0, 2.0), (3.0, 25.0)]).unwrap();
        let s = schedule_dp(&[0, 1], &prof, sw(1.0)).unwrap();
        assert_eq!(s.assignment, vec![Dsp, Cpu]);
        assert_eq!(s.total_latency, 6.0);
        assert_eq!(s.switch_count, 1);
    }

    #[test]
    fn single_transpose_on_cpu() {
        let prof = ProfileSet::from_pairs(&[(3.0, 25.0)]).unwrap();
        let s = schedule_dp(&[0], &prof, SwitchCost::default()).unwrap();
        assert_eq!(s.assignment, vec![Cpu]);
        assert_eq!(s.total_latency, 3.0);
    }

    #[test]
    fn unsupported_everywhere_forces_cpu() {
        let inf = f64::INFINITY;
        let prof = ProfileSet::from_pairs(&[(5.0, inf), (1.0, inf), (9.0, inf)]).unwrap();
        for s in [
            schedule_dp(&[0, 1, 2], &prof, sw(0.0)).unwrap(),
            schedule_bruteforce(&[0, 1, 2], &prof, sw(0.0)).unwrap(),
        ] {
            assert!(s.assignment.iter().all(|p| *p == Cpu));
            assert_eq!(s.total_latency, 15.0);
        }
    }

    #[test]
    fn symmetric_latencies_tie_to_cpu() {
        let prof = ProfileSet::from_pairs(&[(4.0, 4.0), (2.0, 2.0)]).unwrap();
        let s = schedule_dp(&[0, 1], &prof, sw(0.0)).unwrap();
        let b = schedule_bruteforce(&[0, 1], &prof, sw(0.0)).unwrap();
        assert_eq!(s.assignment, vec![Cpu, Cpu]);
        assert_eq!(s.total_latency, b.total_latency);
    }

    #[test]
    fn missing_profile_errors() {
        let prof = ProfileSet::from_pairs(&[(1.0, 1.0)]).unwrap();
        assert!(matches!(
            schedule_dp(&[0, 1], &prof, sw(0.0)),
            Err(Error::Schedule(_))
        ));
    }

    #[test]
    fn empty_sequence() {
        let s = schedule_dp(&[], &ProfileSet::new(), sw(5.0)).unwrap();
        assert_eq!(s.total_latency, 0.0);
        assert!(s.assignment.is_empty());
    }

    #[test]
    fn greedy_zero_switch_matches_dp_cost() {
        let prof = ProfileSet::from_pairs(&[(10.0, 2.0), (3.0, 25.0), (7.0, 7.5)]).unwrap();
        let g = schedule_greedy(&[0, 1, 2], &prof, sw(0.0)).unwrap();
        let d = schedule_dp(&[0, 1, 2], &prof, sw(0.0)).unwrap();
        assert_eq!(g.assignment, vec![Dsp, Cpu, Cpu]);
        assert_eq!(g.total_latency, d.total_latency);
    }

    fn instance() -> impl Strategy<Value = (Vec<(f64, f64)>, f64)> {
        (
            prop::collection::vec(
                (
                    1.0f64..50.0,
                    prop_oneof![4 => 1.0f64..50.0, 1 => Just(f64::INFINITY)],
                ),
                1..=10,
            ),
            prop_oneof![Just(0.0), Just(1.0), Just(25.0), 0.0f64..40.0],
        )
    }

    proptest! {
        #[test]
        fn dp_equals_bruteforce((pairs, s) in instance()) {
            let prof = ProfileSet::from_pairs(&pairs).unwrap();
            let seq: Vec<u32> = (0..pairs.len() as u32).collect();
            let d = schedule_dp(&seq, &prof, sw(s)).unwrap();
            let b = schedule_bruteforce(&seq, &prof, sw(s)).unwrap();
            prop_assert_eq!(d.total_latency, b.total_latency);
            prop_assert_eq!(d.total_latency, sequential_cost(&seq, &d.assignment, &prof, sw(s)).unwrap());
            for (i, p) in d.assignment.iter().enumerate() {
                prop_assert!(!(*p == Dsp && pairs[i].1.is_infinite()));
            }
        }

        #[test]
        fn higher_switch_never_cheaper_nor_more_switches((pairs, s) in instance(), extra in 0.0f64..30.0) {
            let prof = ProfileSet::from_pairs(&pairs).unwrap();
            let seq: Vec<u32> = (0..pairs.len() as u32).collect();
            let lo = schedule_dp(&seq, &prof, sw(s)).unwrap();
            let hi = schedule_dp(&seq, &prof, sw(s + extra)).unwrap();
            prop_assert!(hi.total_latency >= lo.total_latency);
            prop_assert!(hi.switch_count <= lo.switch_count);
        }
    }
}
