mod common;

use std::collections::BTreeSet;

use common::{set, transfer, Builder};
use permtx::checkers::{
    brute_force_serializable, check, check_all, fast_path, witness_is_valid, Criterion, FastPath,
    Status, TraceView,
};
use permtx::ledger::{replay, ProgramCall, TxOutcome, VersionedStore};
use permtx::trace::{Correctness, Trace};
use proptest::prelude::*;

fn status(trace: &Trace, c: Criterion) -> Status {
    check(trace, c).unwrap().status
}

#[test]
fn empty_trace_passes_everything() {
    let trace = Builder::new(3, &[(0, 10)]).finish_replayed(&[]);
    for v in check_all(&trace, &Criterion::ALL).unwrap() {
        assert_eq!(v.status, Status::Pass, "{:?}", v);
    }
}

#[test]
fn commit_then_revert_violates_durability_with_that_pair() {
    let mut b = Builder::new(2, &[]);
    let t = b.submit(0, 1, ProgramCall::Noop);
    b.commit(0, t, TxOutcome::Committed, 1, 0);
    let c = b.last();
    b.revert(0, t);
    let r = b.last();
    let trace = b.finish_replayed(&[]);
    let v = check(&trace, Criterion::Durability).unwrap();
    assert_eq!(v.status, Status::Violated);
    assert_eq!(v.witnesses[0].events, vec![c, r]);
    assert!(v.witnesses.iter().all(|w| witness_is_valid(&trace, w)));
}

#[test]
fn acked_tx_missing_at_a_correct_node_violates_durability() {
    let mut b = Builder::new(2, &[]);
    let t = b.submit(0, 1, set(0, 1));
    b.commit(0, t, TxOutcome::Committed, 1, 0).ack(0, t, 0);
    let s = set(0, 1);
    let d1 = replay(&VersionedStore::new(), [&s]).0.digest();
    let trace = b.finish_with(&[d1, VersionedStore::new().digest()]);
    assert_eq!(status(&trace, Criterion::Durability), Status::Violated);
    assert_eq!(status(&trace, Criterion::Atomicity), Status::Violated);
    assert_eq!(status(&trace, Criterion::OneCopySerializability), Status::Violated);
}

#[test]
fn byzantine_nodes_are_ignored() {
    let mut b = Builder::new(2, &[]);
    let t = b.submit(0, 1, ProgramCall::Noop);
    b.commit(1, t, TxOutcome::Committed, 1, 0).revert(1, t);
    b.mark(1, Correctness::Byzantine);
    let trace = b.finish_replayed(&[]);
    for v in check_all(&trace, &Criterion::ALL).unwrap() {
        assert_eq!(v.status, Status::Pass, "{:?}", v);
    }
}

#[test]
fn equal_outcomes_everywhere_pass_atomicity() {
    let mut b = Builder::new(2, &[(0, 10)]);
    let t1 = b.submit(0, 1, transfer(0, 1, 3));
    let t2 = b.submit(1, 1, transfer(0, 1, 30));
    for n in 0..2 {
        b.commit(n, t1, TxOutcome::Committed, 1, 0);
        b.commit(n, t2, TxOutcome::Aborted, 1, 1);
    }
    let trace = b.finish_replayed(&[&transfer(0, 1, 3), &transfer(0, 1, 30)]);
    assert_eq!(status(&trace, Criterion::Atomicity), Status::Pass);
    assert_eq!(status(&trace, Criterion::OneCopySerializability), Status::Pass);
}

#[test]
fn outcome_divergence_violates_atomicity() {
    let mut b = Builder::new(2, &[]);
    let t = b.submit(0, 1, set(0, 7));
    b.commit(0, t, TxOutcome::Committed, 1, 0);
    b.commit(1, t, TxOutcome::MvccConflict, 1, 0);
    let s = set(0, 7);
    let d = replay(&VersionedStore::new(), [&s]).0.digest();
    let trace = b.finish_with(&[d, VersionedStore::new().digest()]);
    let v = check(&trace, Criterion::Atomicity).unwrap();
    assert_eq!(v.status, Status::Violated);
    assert!(v.witnesses[0].reason.contains("mvcc-conflict"));
}

#[test]
fn different_orders_with_equal_results_are_serializable() {
    // Two commuting writes in different orders: the fast path cannot
    // decide, the oracle finds an order.
    let mut b = Builder::new(2, &[]);
    let t1 = b.submit(0, 1, set(0, 1));
    let t2 = b.submit(1, 1, set(1, 2));
    b.commit(0, t1, TxOutcome::Committed, 1, 0)
        .commit(0, t2, TxOutcome::Committed, 1, 1);
    b.commit(1, t2, TxOutcome::Committed, 1, 0)
        .commit(1, t1, TxOutcome::Committed, 1, 1);
    let trace = b.finish_replayed(&[&set(0, 1), &set(1, 2)]);
    let view = TraceView::build(&trace).unwrap();
    assert_eq!(fast_path(&view), FastPath::Inconclusive);
    assert_eq!(status(&trace, Criterion::OneCopySerializability), Status::Pass);
}

#[test]
fn forked_states_are_not_serializable() {
    // Node 0 applied x=1 then x=2, node 1 the reverse. Final digests
    // differ, and no single order explains both.
    let mut b = Builder::new(2, &[]);
    let t1 = b.submit(0, 1, set(0, 1));
    let t2 = b.submit(1, 1, set(0, 2));
    b.commit(0, t1, TxOutcome::Committed, 1, 0)
        .commit(0, t2, TxOutcome::Committed, 1, 1);
    b.commit(1, t2, TxOutcome::Committed, 1, 0)
        .commit(1, t1, TxOutcome::Committed, 1, 1);
    let g = VersionedStore::new();
    let (a, c) = (set(0, 1), set(0, 2));
    let d0 = replay(&g, [&a, &c]).0.digest();
    let d1 = replay(&g, [&c, &a]).0.digest();
    let trace = b.finish_with(&[d0, d1]);
    let v = check(&trace, Criterion::OneCopySerializability).unwrap();
    assert_eq!(v.status, Status::Violated);
    let targets: BTreeSet<_> = [d0, d1].into();
    assert_eq!(brute_force_serializable(&[a, c], &targets, &g), Ok(false));
}

#[test]
fn oracle_base_cases() {
    let g = VersionedStore::genesis([(permtx::ids::Address(0), 4)]);
    assert_eq!(
        brute_force_serializable(&[], &[g.digest()].into(), &g),
        Ok(true)
    );
    let (a, b) = (set(1, 1), set(2, 2));
    for order in [[&a, &b], [&b, &a]] {
        let d = replay(&g, order).0.digest();
        assert_eq!(
            brute_force_serializable(&[a.clone(), b.clone()], &[d].into(), &g),
            Ok(true)
        );
    }
    let many: Vec<_> = (0..9).map(|i| set(i, 1)).collect();
    assert!(brute_force_serializable(&many, &[g.digest()].into(), &g).is_err());
}

#[test]
fn client_order_inversion_violates_session() {
    let mut b = Builder::new(1, &[]);
    let s1 = b.submit(0, 1, ProgramCall::Noop);
    let s2 = b.submit(0, 2, ProgramCall::Noop);
    b.commit(0, s2, TxOutcome::Committed, 1, 3);
    let first = b.last();
    b.commit(0, s1, TxOutcome::Committed, 2, 0);
    let second = b.last();
    let trace = b.finish_replayed(&[]);
    let v = check(&trace, Criterion::Session).unwrap();
    assert_eq!(v.status, Status::Violated);
    assert_eq!(v.witnesses[0].events, vec![first, second]);
}

#[test]
fn stale_read_after_ack_violates_session() {
    // Node 0 acks x=7; node 1 has not applied it and serves x=5.
    let mut b = Builder::new(2, &[(0, 5)]);
    let t = b.submit(0, 1, set(0, 7));
    b.commit(0, t, TxOutcome::Committed, 1, 0).ack(0, t, 0);
    let ack = b.last();
    b.read(0, 1, 0, 5);
    let stale = b.last();
    b.commit(1, t, TxOutcome::Committed, 1, 0);
    b.read(0, 1, 0, 7);
    let trace = b.finish_replayed(&[&set(0, 7)]);
    let v = check(&trace, Criterion::Session).unwrap();
    assert_eq!(v.status, Status::Violated);
    assert_eq!(v.witnesses.len(), 1);
    assert_eq!(v.witnesses[0].events, vec![ack, stale]);
}

#[test]
fn verdicts_survive_a_round_trip_through_text() {
    let mut b = Builder::new(2, &[(0, 5)]);
    let t = b.submit(0, 1, set(0, 7));
    b.commit(0, t, TxOutcome::Committed, 1, 0).ack(0, t, 0);
    b.read(0, 1, 0, 5);
    let trace = b.finish_replayed(&[&set(0, 7)]);
    let parsed = Trace::parse(&trace.to_text()).unwrap();
    assert_eq!(
        check_all(&trace, &Criterion::ALL).unwrap(),
        check_all(&parsed, &Criterion::ALL).unwrap()
    );
}

#[test]
fn revert_of_uncommitted_tx_is_a_structural_error() {
    let mut b = Builder::new(1, &[]);
    let t = b.submit(0, 1, ProgramCall::Noop);
    b.revert(0, t);
    let trace = b.finish_replayed(&[]);
    assert!(check(&trace, Criterion::Durability).is_err());
}

#[derive(Clone, Debug)]
enum Op {
    Commit { node: u32, tx: usize, h: u64 },
    Revert { node: u32, tx: usize },
    Ack { tx: usize },
    Read { node: u32, tx: usize },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0u32..3, 0usize..4, 1u64..4).prop_map(|(node, tx, h)| Op::Commit { node, tx, h }),
        (0u32..3, 0usize..4).prop_map(|(node, tx)| Op::Revert { node, tx }),
        (0usize..4).prop_map(|tx| Op::Ack { tx }),
        (0u32..3, 0usize..4).prop_map(|(node, tx)| Op::Read { node, tx }),
    ]
}

/// Build a structurally valid trace from `ops`, skipping ops that would be
/// malformed (double commit, revert of a non-live tx).
fn build(ops: &[Op]) -> Trace {
    let mut b = Builder::new(3, &[]);
    let txs: Vec<_> = (0..4)
        .map(|i| b.submit(i as u32 % 2, 1 + i as u64 / 2, set(i as u32, 1)))
        .collect();
    let mut live = BTreeSet::new();
    let mut next_index = [0u32; 3];
    for o in ops {
        match *o {
            Op::Commit { node, tx, h } => {
                if live.insert((node, tx)) {
                    next_index[node as usize] += 1;
                    b.commit(node, txs[tx], TxOutcome::Committed, h, next_index[node as usize]);
                }
            }
            Op::Revert { node, tx } => {
                if live.remove(&(node, tx)) {
                    b.revert(node, txs[tx]);
                }
            }
            Op::Ack { tx } => {
                b.ack(tx as u32 % 2, txs[tx], 0);
            }
            Op::Read { node, tx } => {
                b.read(tx as u32 % 2, node, tx as u32, 0);
            }
        }
    }
    b.finish_replayed(&[])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn witnesses_are_valid(ops in proptest::collection::vec(op(), 0..25)) {
        let trace = build(&ops);
        for v in check_all(&trace, &Criterion::ALL).unwrap() {
            prop_assert_eq!(v.status == Status::Violated, !v.witnesses.is_empty());
            for w in &v.witnesses {
                prop_assert!(witness_is_valid(&trace, w));
            }
        }
    }

    #[test]
    fn event_witnesses_persist_when_events_are_appended(
        ops in proptest::collection::vec(op(), 0..20),
        more in proptest::collection::vec(op(), 0..10),
    ) {
        let short = build(&ops);
        let long = build(&[ops.clone(), more].concat());
        let body = |t: &Trace| t.records.iter().position(|r| matches!(r.event, permtx::trace::Event::NodeStatus { .. })).unwrap();
        let short_body = body(&short);
        for c in [Criterion::Durability, Criterion::Session] {
            let a = check(&short, c).unwrap();
            let b = check(&long, c).unwrap();
            // Witnesses made only of history events (no final-state records)
            // can never disappear.
            for w in a.witnesses.iter().filter(|w| w.events.iter().all(|i| *i < short_body)) {
                prop_assert!(b.witnesses.iter().any(|x| x.events == w.events), "{:?} lost", w);
            }
            if a.witnesses.iter().any(|w| w.events.iter().all(|i| *i < short_body)) {
                prop_assert_eq!(b.status, Status::Violated);
            }
        }
    }

    #[test]
    fn checking_is_pure(ops in proptest::collection::vec(op(), 0..25)) {
        let trace = build(&ops);
        let reparsed = Trace::parse(&trace.to_text()).unwrap();
        prop_assert_eq!(
            check_all(&trace, &Criterion::ALL).unwrap(),
            check_all(&reparsed, &Criterion::ALL).unwrap()
        );
    }
}
