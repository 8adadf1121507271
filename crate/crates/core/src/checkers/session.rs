use std::collections::BTreeMap;

use super::view::{LedgerOp, LiveCommit, TraceView};
use crate::ids::TxId;
use super::{Criterion, Verdict, Witness};
use crate::ids::ClientId;
use crate::ledger::{ProgramCall, TxOutcome};

/// Violated when a correct node's ledger at any moment holds a client's
/// transactions out of client-sequence order, or when a client's read, issued after the ack
/// of its own write to that address, is served by a correct node that does
/// not yet hold the write.
pub(super) fn check(view: &TraceView) -> Verdict {
    let mut witnesses = Vec::new();

    for node in &view.correct {
        // client -> live commits of that client on this node
        let mut live: BTreeMap<ClientId, BTreeMap<TxId, (u64, LiveCommit)>> = BTreeMap::new();
        for (tx, op) in view.ops.get(node).into_iter().flatten() {
            let Some(req) = view.txs.get(tx) else {
                continue;
            };
            let entries = live.entry(req.client).or_default();
            match op {
                LedgerOp::Commit(c) => {
                    for (seq, other) in entries.values() {
                        let inverted = (*seq > req.seq && other.position < c.position)
                            || (*seq < req.seq && other.position > c.position);
                        if inverted {
                            witnesses.push(Witness::new(
                                format!(
                                    "{node} holds {} seq {} at {} and seq {} at {}",
                                    req.client, seq, other.position, req.seq, c.position
                                ),
                                vec![other.index, c.index],
                            ));
                        }
                    }
                    entries.insert(*tx, (req.seq, *c));
                }
                LedgerOp::Revert { .. } => {
                    entries.remove(tx);
                }
            }
        }
    }

    for read in &view.reads {
        if !view.is_correct(read.node) {
            continue;
        }
        for ack in &view.acks {
            if ack.index >= read.index || ack.client != read.client {
                continue;
            }
            if ack.outcome != TxOutcome::Committed || !view.is_correct(ack.node) {
                continue;
            }
            let Some(req) = view.txs.get(&ack.tx) else {
                continue;
            };
            if !writes(&req.call, read.address) {
                continue;
            }
            if !view.live_before(read.node, ack.tx, read.index) {
                witnesses.push(Witness::new(
                    format!(
                        "{} read {}={} at {} after ack of its write {}",
                        read.client, read.address, read.value, read.node, ack.tx
                    ),
                    vec![ack.index, read.index],
                ));
            }
        }
    }
    Verdict::from_witnesses(Criterion::Session, witnesses, Vec::new())
}

fn writes(call: &ProgramCall, address: crate::ids::Address) -> bool {
    match call {
        ProgramCall::Transfer { from, to, .. } if from == to => false,
        _ => call.natural_writes().contains(&address),
    }
}
