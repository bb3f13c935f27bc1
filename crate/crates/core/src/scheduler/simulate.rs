use super::{ProfileSet, SubgraphPlan, SwitchCost};
use crate::error::Result;

/// Earliest-start list simulation of the plan on one CPU and one DSP.
pub fn simulate_makespan(
    plan: &SubgraphPlan,
    profiles: &ProfileSet,
    switch: SwitchCost,
) -> Result<f64> {
    let mut durations = Vec::with_capacity(plan.len());
    for sg in &plan.subgraphs {
        let mut d = 0.0;
        for &op in &sg.ops {
            d += profiles.get(op)?.latency(sg.processor);
        }
        durations.push(d);
    }
    Ok(simulate_with_durations(plan, &durations, switch))
}

/// Same simulation with caller-supplied subgraph durations. A subgraph starts
/// once every predecessor has finished (plus the switch latency if the
/// predecessor ran on the other processor) and its processor is idle.
pub fn simulate_with_durations(plan: &SubgraphPlan, durations: &[f64], switch: SwitchCost) -> f64 {
    let mut finish = vec![0.0f64; plan.len()];
    let mut free = [0.0f64; 2];
    let mut makespan = 0.0f64;
    for (i, sg) in plan.subgraphs.iter().enumerate() {
        let mut ready = 0.0f64;
        for p in plan.predecessors(i) {
            let cross = if plan.subgraphs[p].processor != sg.processor {
                switch.latency
            } else {
                0.0
            };
            ready = ready.max(finish[p] + cross);
        }
        let r = sg.processor as usize;
        let start = ready.max(free[r]);
        finish[i] = start + durations[i];
        free[r] = finish[i];
        makespan = makespan.max(finish[i]);
    }
    makespan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::{build_subgraphs, schedule_dp, Dag, Processor, Schedule};
    use proptest::prelude::*;
    use Processor::{Cpu, Dsp};

    #[test]
    fn chain_makespan_equals_dp_total() {
        let prof =
            ProfileSet::from_pairs(&[(10.0, 2.0), (3.0, 25.0), (9.0, 1.0), (1.0, 9.0)]).unwrap();
        let sw = SwitchCost::new(1.0).unwrap();
        let s = schedule_dp(&[0, 1, 2, 3], &prof, sw).unwrap();
        let plan = build_subgraphs(&Dag::chain(4), &s).unwrap();
        let m = simulate_makespan(&plan, &prof, sw).unwrap();
        assert!((m - s.total_latency).abs() < 1e-9);
    }

    #[test]
    fn independent_branches_overlap() {
        // 0 (dsp, 10) and 1 (cpu, 6) are independent; 2 (cpu, 0) joins them.
        let dag = Dag {
            nodes: vec![0, 1, 2],
            edges: vec![(0, 2), (1, 2)],
        };
        let s = Schedule {
            order: vec![1, 0, 2],
            assignment: vec![Cpu, Dsp, Cpu],
            total_latency: 0.0,
            switch_count: 2,
        };
        let prof = ProfileSet::from_pairs(&[(20.0, 10.0), (6.0, 30.0), (0.0, 5.0)]).unwrap();
        let plan = build_subgraphs(&dag, &s).unwrap();
        let m = simulate_makespan(&plan, &prof, SwitchCost::new(25.0).unwrap()).unwrap();
        assert_eq!(m, 10.0 + 25.0);
    }

    #[test]
    fn zero_latency_is_switch_only() {
        let prof = ProfileSet::from_pairs(&[(0.0, 0.0); 4]).unwrap();
        let s = Schedule {
            order: vec![0, 1, 2, 3],
            assignment: vec![Cpu, Dsp, Dsp, Cpu],
            total_latency: 0.0,
            switch_count: 2,
        };
        let plan = build_subgraphs(&Dag::chain(4), &s).unwrap();
        assert_eq!(
            simulate_makespan(&plan, &prof, SwitchCost::new(7.0).unwrap()).unwrap(),
            14.0
        );
    }

    proptest! {
        #[test]
        fn overlap_never_hurts(
            n in 2u32..12,
            raw in prop::collection::vec((0u32..12, 0u32..12), 0..30),
            lat in prop::collection::vec((0.0f64..20.0, 0.0f64..20.0), 12),
            sw in 0.0f64..10.0,
        ) {
            let dag = Dag {
                nodes: (0..n).collect(),
                edges: raw.into_iter().filter(|(a, b)| a < b && *b < n).collect(),
            };
            let prof = ProfileSet::from_pairs(&lat[..n as usize]).unwrap();
            let sw = SwitchCost::new(sw).unwrap();
            let order = crate::scheduler::topo_order(&dag).unwrap();
            let s = schedule_dp(&order, &prof, sw).unwrap();
            let plan = build_subgraphs(&dag, &s).unwrap();
            let m = simulate_makespan(&plan, &prof, sw).unwrap();
            prop_assert!(m <= s.total_latency + 1e-9);
        }
    }
}
