//! Join/leave invariants over random graphs.

use std::collections::BTreeMap;

use proptest::prelude::*;

use primetime::graph::{self, Family, Topology};
use primetime::primes::{Codec, Prime};
use primetime::sim::{self, Event, EventAction, RunOutput, SimConfig, TopologySpec};
use primetime::Variant;

const M: u32 = 3;

fn removable(t: &Topology, v: usize) -> bool {
    let n = t.node_count();
    let rest: Vec<(usize, usize)> = t
        .edges()
        .into_iter()
        .filter(|&(a, b)| a != v && b != v)
        .map(|(a, b)| (a - (a > v) as usize, b - (b > v) as usize))
        .collect();
    n > 1 && Topology::new(n - 1, &rest).is_ok()
}

fn goodbyes(out: &RunOutput, prime: Prime) -> BTreeMap<usize, usize> {
    let codec = Codec::new(M);
    let mut counts = BTreeMap::new();
    for t in &out.traces {
        for r in &t.agents {
            let pairs = codec.factor_bounded(&r.message, 2 * (M + 1)).unwrap();
            if pairs.get(&prime).is_some_and(|&e| e > M) {
                *counts.entry(r.agent).or_insert(0) += 1;
            }
        }
    }
    counts
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn churn_keeps_tables_consistent(
        n in 4usize..14,
        p in 0.25f64..0.7,
        seed in 0u64..1000,
        attach_pick in 0usize..100,
        leave_pick in 0usize..100,
        incremental in any::<bool>(),
    ) {
        let base = graph::generate(Family::RandomConnected, n, p, seed).unwrap();
        let d = graph::diameter(&base);
        let attach = 1 + attach_pick % n;
        let candidates: Vec<usize> = (1..=n).filter(|&v| v != attach && removable(&base, v)).collect();
        prop_assume!(!candidates.is_empty());
        let leaver = candidates[leave_pick % candidates.len()];
        let variant = if incremental { Variant::Incremental } else { Variant::PrimeTime };

        let join_round = d + 2;
        let leave_round = join_round + 2 * (d + 2);
        let mut cfg = SimConfig::new(TopologySpec::Edges { n, edges: base.edges() }, M, variant);
        cfg.seed = seed;
        cfg.events = vec![
            Event { round: join_round, action: EventAction::Join { node: n + 1, attach: vec![attach], value: 2 } },
            Event { round: leave_round, action: EventAction::Leave { node: leaver } },
        ];
        let out = sim::run(&cfg).unwrap();
        prop_assert_eq!(out.anomalies().count(), 0);

        let last = out.traces.last().unwrap();
        prop_assert!(sim::is_complete(last));
        prop_assert_eq!(last.agents.len(), n);
        let lp = out.initial[&leaver].0;
        prop_assert!(last.agents.iter().all(|r| r.table.iter().all(|&(q, _)| q != lp)));

        // the leaver says goodbye once, every other agent relays it once
        let senders = goodbyes(&out, lp);
        prop_assert_eq!(senders.len(), n + 1);
        prop_assert!(senders.values().all(|&c| c == 1), "{:?}", senders);
    }
}
