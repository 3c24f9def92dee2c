use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use protofed::adversary::{poison, FaultPlan, ServerBehavior};
use protofed::aggregation::{aggregate, stats_of, AggregationMode};
use protofed::consensus::{consensus_round, max_faulty, write_trace_jsonl, ConsensusConfig, MessageKind};
use protofed::experiment::prototype_spread;
use protofed::{PrototypeSet, Submission};

fn submissions(seed: u64, k: usize) -> Vec<Submission> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|id| {
            let mut protos = PrototypeSet::new();
            for j in 0..4 {
                if rng.random_bool(0.6) || j == id % 4 {
                    let v = (0..4).map(|d| (j * 4 + d) as f64 * 0.1 + rng.random_range(-0.05..0.05)).collect();
                    protos.insert(j, v, rng.random_range(1..10));
                }
            }
            Submission { client_id: id, protos }
        })
        .collect()
}

fn behavior(code: u8) -> ServerBehavior {
    match code % 4 {
        0 => ServerBehavior::Crash { from_view: 0 },
        1 => ServerBehavior::Amnesia,
        2 => ServerBehavior::Tamper { factor: 1.5 },
        _ => ServerBehavior::Equivocate { factor: 0.5 },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn honest_servers_agree_and_confirm(
        n in 4usize..11,
        seed in any::<u64>(),
        picks in prop::collection::vec((0usize..11, any::<u8>()), 0..4),
    ) {
        let mut plan = FaultPlan::new();
        for (id, code) in picks {
            if id < n && plan.len() < max_faulty(n) {
                plan.insert(id, behavior(code));
            }
        }
        let subs = submissions(seed, 8);
        let out = consensus_round(&subs, &ConsensusConfig::new(n, 1), &plan, seed).unwrap();
        prop_assert!(!out.aborted);
        prop_assert!(!out.safety_risk);
        prop_assert!(out.view_changes <= n);
        prop_assert!(out.honest_agreement());
        let honest_confirmed = out.decisions.iter().filter(|d| d.behavior.is_honest() && d.confirmed.is_some()).count();
        prop_assert!(honest_confirmed >= 1);
        let bytes = out.confirmed.as_ref().unwrap().global.canonical_bytes();
        for d in out.decisions.iter().filter(|d| d.behavior.is_honest()) {
            if let Some((_, p)) = &d.confirmed {
                prop_assert_eq!(p.global.canonical_bytes(), bytes.clone());
            }
        }
    }
}

#[test]
fn filtered_poisoners_leave_the_honest_aggregate_bit_for_bit() {
    for seed in 0..40u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 10;
        let zeta = rng.random_range(1..3);
        let psi = zeta + rng.random_range(0..2);
        let subs = submissions(seed, k);
        let mut bad: Vec<usize> = rand::seq::index::sample(&mut rng, k, zeta).into_vec();
        bad.sort();
        let honest: Vec<Submission> = subs.iter().filter(|s| !bad.contains(&s.client_id)).cloned().collect();
        let spread = prototype_spread(&honest.iter().collect::<Vec<_>>());
        let mut poisoned = subs.clone();
        for &id in &bad {
            poisoned[id].protos = poison(&subs[id].protos, 10.0 * spread.max(0.05) * 10.0, &mut rng);
        }
        let out = consensus_round(&poisoned, &ConsensusConfig::new(4, psi), &FaultPlan::new(), seed).unwrap();
        let confirmed = out.confirmed.unwrap();
        for id in &bad {
            assert!(confirmed.filtered.contains(id), "seed {seed}: {id} not filtered");
        }
        if psi == zeta {
            let expect = aggregate(&honest, &stats_of(&honest), AggregationMode::Normalized).unwrap();
            assert_eq!(confirmed.global.canonical_bytes(), expect.canonical_bytes());
        }
    }
}

#[test]
fn equivocating_leader_never_splits_honest_servers() {
    for n in [4, 7, 10] {
        for seed in 0..20 {
            let plan: FaultPlan = [(0, ServerBehavior::Equivocate { factor: 2.0 })].into_iter().collect();
            let out = consensus_round(&submissions(seed, 6), &ConsensusConfig::new(n, 1), &plan, seed).unwrap();
            assert!(out.honest_agreement());
            assert!(out.confirmed.is_some());
        }
    }
}

#[test]
fn crash_in_later_view_is_harmless_when_earlier_leader_succeeds() {
    let plan: FaultPlan = [(1, ServerBehavior::Crash { from_view: 1 })].into_iter().collect();
    let out = consensus_round(&submissions(3, 6), &ConsensusConfig::new(4, 0), &plan, 3).unwrap();
    assert_eq!(out.confirmed_view, Some(0));
}

#[test]
fn consecutive_faulty_leaders_cost_one_view_each() {
    let plan: FaultPlan = [(0, ServerBehavior::Crash { from_view: 0 }), (1, ServerBehavior::Tamper { factor: 3.0 })]
        .into_iter()
        .collect();
    let out = consensus_round(&submissions(4, 6), &ConsensusConfig::new(7, 1), &plan, 4).unwrap();
    assert_eq!(out.view_changes, 2);
    assert_eq!(out.confirmed_view, Some(2));
}

#[test]
fn divided_mode_also_reaches_consensus() {
    let mut cfg = ConsensusConfig::new(4, 1);
    cfg.mode = AggregationMode::DividedBySharers;
    let subs = submissions(9, 6);
    let out = consensus_round(&subs, &cfg, &FaultPlan::new(), 9).unwrap();
    let normalized = consensus_round(&subs, &ConsensusConfig::new(4, 1), &FaultPlan::new(), 9).unwrap();
    assert!(out.confirmed.is_some());
    assert_ne!(out.confirmed.unwrap().global, normalized.confirmed.unwrap().global);
}

#[test]
fn trace_lines_parse_and_cover_all_phases() {
    let out = consensus_round(&submissions(1, 6), &ConsensusConfig::new(4, 1), &FaultPlan::new(), 1).unwrap();
    let kinds: std::collections::BTreeSet<MessageKind> = out.trace.iter().map(|t| t.kind).collect();
    assert!(kinds.contains(&MessageKind::Proposal));
    assert!(kinds.contains(&MessageKind::Prepare));
    assert!(kinds.contains(&MessageKind::Commit));
    let ticks: Vec<u64> = out.trace.iter().map(|t| t.delivered_at).collect();
    assert!(ticks.windows(2).all(|w| w[0] < w[1]));

    let mut buf = Vec::new();
    write_trace_jsonl(&mut buf, &out.trace).unwrap();
    for line in String::from_utf8(buf).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["digest"].as_str().unwrap().len(), 64);
    }
}
