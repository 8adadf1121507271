use std::collections::BTreeSet;

use itertools::Itertools;

use super::view::TraceView;
use super::{Criterion, Verdict, Witness};
use crate::ids::{Digest, NodeId, TxId};
use crate::ledger::{replay, ProgramCall, TxOutcome, VersionedStore};

/// Largest history the exhaustive oracle will permute (8! orders).
pub const ORACLE_LIMIT: usize = 8;

/// Result of the cheap check.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FastPath {
    /// All correct nodes hold the same serial history and its replay
    /// reproduces every final digest.
    Pass,
    /// Correct nodes ended with different states; no single serial order
    /// can produce both.
    Violated { nodes: (NodeId, NodeId) },
    Inconclusive,
}

/// The serial history of a node: its live transactions, in ledger order,
/// whose program ran against committed state.
fn serial_history(view: &TraceView, node: NodeId) -> Vec<(TxId, TxOutcome)> {
    view.sequence(node)
        .into_iter()
        .filter(|(_, c)| c.outcome.in_serial_history())
        .map(|(t, c)| (t, c.outcome))
        .collect()
}

fn replays_to(view: &TraceView, history: &[(TxId, TxOutcome)], target: Digest) -> bool {
    let Some(calls) = history
        .iter()
        .map(|(t, _)| view.txs.get(t).map(|r| &r.call))
        .collect::<Option<Vec<_>>>()
    else {
        return false;
    };
    let (store, outcomes) = replay(&view.genesis, calls);
    store.digest() == target && outcomes.iter().zip(history).all(|(o, (_, want))| o == want)
}

pub fn fast_path(view: &TraceView) -> FastPath {
    let nodes: Vec<NodeId> = view.correct.iter().copied().collect();
    let digests: Vec<(NodeId, Digest)> = nodes
        .iter()
        .filter_map(|n| view.finals.get(n).map(|(_, d)| (*n, *d)))
        .collect();
    if let Some(((a, _), (b, _))) = digests
        .iter()
        .tuple_combinations()
        .find(|((_, da), (_, db))| da != db)
    {
        return FastPath::Violated { nodes: (*a, *b) };
    }
    let Some((first, target)) = digests.first().copied() else {
        return FastPath::Pass;
    };
    let seq = serial_history(view, first);
    let same = nodes.iter().all(|n| serial_history(view, *n) == seq);
    if same && replays_to(view, &seq, target) {
        FastPath::Pass
    } else {
        FastPath::Inconclusive
    }
}

#[derive(Debug, PartialEq, Eq)]
pub struct OracleRefused(pub usize);

/// Exhaustive oracle: does some serial order of `calls` reproduce every
/// digest in `targets`?
pub fn brute_force_serializable(
    calls: &[ProgramCall],
    targets: &BTreeSet<Digest>,
    genesis: &VersionedStore,
) -> Result<bool, OracleRefused> {
    if calls.len() > ORACLE_LIMIT {
        return Err(OracleRefused(calls.len()));
    }
    if targets.len() > 1 {
        return Ok(false);
    }
    let Some(target) = targets.first() else {
        return Ok(true);
    };
    Ok((0..calls.len())
        .permutations(calls.len())
        .any(|order| replay(genesis, order.iter().map(|i| &calls[*i])).0.digest() == *target))
}

pub(super) fn check(view: &TraceView) -> Verdict {
    let finals: Vec<usize> = view
        .correct
        .iter()
        .filter_map(|n| view.final_index(*n))
        .collect();
    match fast_path(view) {
        FastPath::Pass => return Verdict::from_witnesses(Criterion::OneCopySerializability, vec![], vec![]),
        FastPath::Violated { nodes: (a, b) } => {
            let mut events = Vec::new();
            events.extend(view.final_index(a));
            events.extend(view.final_index(b));
            let w = Witness::new(format!("final states of {a} and {b} differ"), events);
            return Verdict::from_witnesses(Criterion::OneCopySerializability, vec![w], vec![]);
        }
        FastPath::Inconclusive => {}
    }

    let union: BTreeSet<TxId> = view
        .correct
        .iter()
        .flat_map(|n| serial_history(view, *n))
        .map(|(t, _)| t)
        .collect();
    let targets: BTreeSet<Digest> = view
        .correct
        .iter()
        .filter_map(|n| view.finals.get(n).map(|(_, d)| *d))
        .collect();

    // A single node's own order covering every transaction is a witness of
    // serializability without any search.
    for n in &view.correct {
        let h = serial_history(view, *n);
        let covers = h.len() == union.len();
        if covers && targets.len() == 1 && replays_to(view, &h, *targets.first().unwrap()) {
            return Verdict::from_witnesses(Criterion::OneCopySerializability, vec![], vec![]);
        }
    }

    let calls: Option<Vec<ProgramCall>> = union
        .iter()
        .map(|t| view.txs.get(t).map(|r| r.call.clone()))
        .collect();
    let Some(calls) = calls else {
        let w = Witness::new("committed transaction was never submitted", finals);
        return Verdict::from_witnesses(Criterion::OneCopySerializability, vec![w], vec![]);
    };
    match brute_force_serializable(&calls, &targets, &view.genesis) {
        Ok(true) => Verdict::from_witnesses(Criterion::OneCopySerializability, vec![], vec![]),
        Ok(false) => {
            let w = Witness::new(
                format!("no serial order of {} transactions reproduces the final states", calls.len()),
                finals,
            );
            Verdict::from_witnesses(Criterion::OneCopySerializability, vec![w], vec![])
        }
        Err(OracleRefused(n)) => Verdict::from_witnesses(
            Criterion::OneCopySerializability,
            vec![],
            vec![format!(
                "{n} committed transactions exceed the oracle limit of {ORACLE_LIMIT}; fast path inconclusive"
            )],
        ),
    }
}
