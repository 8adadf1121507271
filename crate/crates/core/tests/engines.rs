use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use permtx::checkers::{Criterion, TraceView};
use permtx::harness::scenarios::shipped;
use permtx::harness::suite::map_runs;
use permtx::harness::{run_scenario, run_seeded, simulate, ScenarioConfig};
use permtx::ids::{NodeId, TxId};
use permtx::ledger::TxOutcome;
use permtx::trace::{Event, Trace};

fn cfg(json: &str) -> ScenarioConfig {
    ScenarioConfig::from_json(json).unwrap()
}

fn commits(trace: &Trace) -> BTreeMap<NodeId, Vec<(TxId, TxOutcome)>> {
    let mut out: BTreeMap<NodeId, Vec<(TxId, TxOutcome)>> = BTreeMap::new();
    for r in &trace.records {
        if let Event::Commit { node, tx, outcome, .. } = r.event {
            out.entry(node).or_default().push((tx, outcome));
        }
    }
    out
}

#[test]
fn one_ibft_request_commits_everywhere() {
    let c = cfg(r#"{"protocol": "quorum-ibft", "nodes": 4, "workload": {"txs": 1}}"#);
    let trace = simulate(&c).unwrap();
    let by_node = commits(&trace);
    assert_eq!(by_node.len(), 4);
    let first = &by_node[&NodeId(0)];
    assert_eq!(first.len(), 1);
    assert!(by_node.values().all(|v| v == first));
}

#[test]
fn raft_with_a_crash_stays_live_and_consistent() {
    let out = run_scenario(&shipped("quorum-raft-crash").unwrap()).unwrap();
    assert!(out.passed());
    let by_node = commits(&out.trace);
    let longest = by_node.values().map(Vec::len).max().unwrap();
    assert!(longest > 0);
    // Every node's ledger is a prefix of the longest one.
    let reference = by_node.values().find(|v| v.len() == longest).unwrap();
    for v in by_node.values() {
        assert_eq!(v[..], reference[..v.len()]);
    }
}

#[test]
fn fabric_flags_stale_reads_identically_on_every_peer() {
    let base = shipped("fabric-contention").unwrap();
    let mut saw_conflict = false;
    for seed in 0..10 {
        let out = run_seeded(&base, seed).unwrap();
        let by_node = commits(&out.trace);
        assert_eq!(by_node.len(), base.nodes, "only peers keep ledgers");
        let first = by_node.values().next().unwrap();
        assert!(by_node.values().all(|v| v == first));
        saw_conflict |= first.iter().any(|(_, o)| *o == TxOutcome::MvccConflict);
    }
    assert!(saw_conflict);
}

#[test]
fn sawtooth_peers_agree_on_outcomes_with_a_tampering_proposer() {
    let base = shipped("sawtooth-tampered-root").unwrap();
    for seed in 0..10 {
        let out = run_seeded(&base, seed).unwrap();
        assert!(out.passed());
        let view = TraceView::build(&out.trace).unwrap();
        let correct: Vec<NodeId> = view.correct.iter().copied().collect();
        let seqs: BTreeSet<Vec<(TxId, TxOutcome)>> = correct
            .iter()
            .map(|n| view.sequence(*n).into_iter().map(|(t, c)| (t, c.outcome)).collect())
            .collect();
        assert_eq!(seqs.len(), 1, "seed {seed}");
    }
}

#[test]
fn sawtooth_batches_fail_as_a_unit() {
    let out = run_seeded(&shipped("sawtooth-deps").unwrap(), 3).unwrap();
    let mut batch_outcomes: BTreeMap<(u32, u64), BTreeSet<TxOutcome>> = BTreeMap::new();
    let mut client_of = BTreeMap::new();
    for r in &out.trace.records {
        if let Event::Submit { tx, .. } = &r.event {
            client_of.insert(tx.id, (tx.client.0, (tx.seq - 1) / 2));
        }
    }
    for v in commits(&out.trace).values() {
        for (tx, o) in v {
            batch_outcomes.entry(client_of[tx]).or_default().insert(*o);
        }
    }
    assert!(batch_outcomes.values().all(|s| s.len() == 1));
}

#[test]
fn unknown_nested_keys_are_rejected() {
    for bad in [
        r#"{"protocol": "quorum-ibft", "nodes": 4, "bft": {"propose_timeot": 3}}"#,
        r#"{"protocol": "quorum-ibft", "nodes": 4, "workload": {"tx": 3}}"#,
        r#"{"protocol": "quorum-ibft", "nodes": 4, "network": {"base_delay": 2, "latncy": 3}}"#,
        r#"{"protocol": "quorum-ibft", "nodes": 4, "fabric": {}}"#,
        r#"{"protocol": "quorum-ibft", "nodes": 4, "byzantine": [{"node": 0, "behaviors": ["equivocate"]}, {"node": 1, "behaviors": ["equivocate"]}]}"#,
    ] {
        assert!(ScenarioConfig::from_json(bad).is_err(), "{bad}");
    }
}

#[test]
fn parallel_map_keeps_input_order() {
    let items: Vec<u64> = (0..200).collect();
    assert_eq!(map_runs(&items, |x| x * 3), items.iter().map(|x| x * 3).collect::<Vec<_>>());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bft_with_one_byzantine_is_safe(
        seed in 0u64..10_000,
        tendermint in any::<bool>(),
        txs in 1usize..40,
        conflict in 0u64..=10,
    ) {
        let protocol = if tendermint { "tendermint-bigchaindb" } else { "quorum-ibft" };
        let c = cfg(&format!(
            r#"{{"protocol": "{protocol}", "nodes": 4, "seed": {seed},
                "byzantine": [{{"node": 0, "behaviors": ["equivocate"]}}],
                "workload": {{"txs": {txs}, "conflict_rate": "{conflict}/10", "avoid_byzantine_entry": true}}}}"#
        ));
        let out = run_scenario(&c).unwrap();
        for crit in [Criterion::Durability, Criterion::Atomicity, Criterion::OneCopySerializability] {
            prop_assert!(!out.violated(crit), "{} violated at seed {}", crit, seed);
        }
    }

    #[test]
    fn runs_are_reproducible(seed in 0u64..10_000, which in 0usize..4) {
        let name = ["aura-partition", "fabric-contention", "ripple-high-overlap", "sawtooth-deps"][which];
        let c = shipped(name).unwrap();
        let a = run_seeded(&c, seed).unwrap();
        let b = run_seeded(&c, seed).unwrap();
        prop_assert_eq!(a.trace.to_text(), b.trace.to_text());
        prop_assert_eq!(a.verdicts, b.verdicts);
    }
}

#[test]
fn traces_round_trip_through_files() {
    let out = run_seeded(&shipped("chain-hash-order").unwrap(), 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.trace");
    out.trace.write_to(&path).unwrap();
    let back = Trace::read_from(&path).unwrap();
    assert_eq!(back, out.trace);
    let verdicts = permtx::checkers::check_all(&back, &Criterion::ALL).unwrap();
    assert_eq!(verdicts, out.verdicts);
}
