use std::collections::{BTreeMap, BTreeSet};

use super::CheckError;
use crate::ids::{Address, ClientId, Digest, NodeId, Position, TxId, Value};
use crate::ledger::{TxOutcome, TxRequest, VersionedStore};
use crate::trace::{Correctness, Event, Trace};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LiveCommit {
    pub index: usize,
    pub outcome: TxOutcome,
    pub position: Position,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LedgerOp {
    Commit(LiveCommit),
    Revert { index: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AckRecord {
    pub index: usize,
    pub client: ClientId,
    pub tx: TxId,
    pub node: NodeId,
    pub outcome: TxOutcome,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReadRecord {
    pub index: usize,
    pub client: ClientId,
    pub node: NodeId,
    pub address: Address,
    pub value: Value,
}

/// Indexed, pre-digested form of a trace shared by all checkers.
#[derive(Clone, Debug, Default)]
pub struct TraceView {
    pub genesis: VersionedStore,
    pub txs: BTreeMap<TxId, TxRequest>,
    pub correct: BTreeSet<NodeId>,
    /// Per node, per tx: commit/revert history in trace order.
    pub history: BTreeMap<NodeId, BTreeMap<TxId, Vec<LedgerOp>>>,
    /// Per node: commits still live at the end of the run.
    pub live: BTreeMap<NodeId, BTreeMap<TxId, LiveCommit>>,
    /// Per node: commit/revert operations in trace order.
    pub ops: BTreeMap<NodeId, Vec<(TxId, LedgerOp)>>,
    pub acks: Vec<AckRecord>,
    pub reads: Vec<ReadRecord>,
    pub finals: BTreeMap<NodeId, (usize, Digest)>,
}

impl TraceView {
    pub fn build(trace: &Trace) -> Result<TraceView, CheckError> {
        let mut v = TraceView {
            genesis: trace.genesis(),
            ..TraceView::default()
        };
        let structure = |index: usize, msg: String| CheckError::Structure { index, msg };
        for (index, r) in trace.events() {
            match &r.event {
                Event::Submit { tx, .. } => {
                    v.txs.insert(tx.id, tx.clone());
                }
                Event::Commit {
                    node,
                    tx,
                    outcome,
                    position,
                } => {
                    let live = v.live.entry(*node).or_default();
                    if live.contains_key(tx) {
                        return Err(structure(index, format!("{node} commits {tx} twice")));
                    }
                    let c = LiveCommit {
                        index,
                        outcome: *outcome,
                        position: *position,
                    };
                    live.insert(*tx, c);
                    v.ops
                        .entry(*node)
                        .or_default()
                        .push((*tx, LedgerOp::Commit(c)));
                    v.history
                        .entry(*node)
                        .or_default()
                        .entry(*tx)
                        .or_default()
                        .push(LedgerOp::Commit(c));
                }
                Event::Revert { node, tx } => {
                    let removed = v.live.get_mut(node).and_then(|l| l.remove(tx));
                    if removed.is_none() {
                        return Err(structure(
                            index,
                            format!("{node} reverts {tx} which it has not committed"),
                        ));
                    }
                    v.ops
                        .entry(*node)
                        .or_default()
                        .push((*tx, LedgerOp::Revert { index }));
                    v.history
                        .entry(*node)
                        .or_default()
                        .entry(*tx)
                        .or_default()
                        .push(LedgerOp::Revert { index });
                }
                Event::Ack {
                    client,
                    tx,
                    node,
                    outcome,
                } => v.acks.push(AckRecord {
                    index,
                    client: *client,
                    tx: *tx,
                    node: *node,
                    outcome: *outcome,
                }),
                Event::Read {
                    client,
                    node,
                    address,
                    value,
                } => v.reads.push(ReadRecord {
                    index,
                    client: *client,
                    node: *node,
                    address: *address,
                    value: *value,
                }),
                Event::NodeStatus { node, correctness } => {
                    if *correctness == Correctness::Correct {
                        v.correct.insert(*node);
                    }
                }
                Event::Final { node, digest } => {
                    v.finals.insert(*node, (index, *digest));
                }
                Event::Meta { .. } | Event::Genesis { .. } | Event::Ledger { .. } => {}
            }
        }
        Ok(v)
    }

    pub fn is_correct(&self, node: NodeId) -> bool {
        self.correct.contains(&node)
    }

    /// Live commits of a correct node in ledger position order.
    pub fn sequence(&self, node: NodeId) -> Vec<(TxId, LiveCommit)> {
        let mut seq: Vec<(TxId, LiveCommit)> = self
            .live
            .get(&node)
            .map(|l| l.iter().map(|(t, c)| (*t, *c)).collect())
            .unwrap_or_default();
        seq.sort_by_key(|(t, c)| (c.position, c.index, *t));
        seq
    }

    pub fn live_set(&self, node: NodeId) -> BTreeSet<TxId> {
        self.live
            .get(&node)
            .map(|l| l.keys().copied().collect())
            .unwrap_or_default()
    }

    /// Whether `tx` was live on `node` just before trace record `at`.
    pub fn live_before(&self, node: NodeId, tx: TxId, at: usize) -> bool {
        let Some(ops) = self.history.get(&node).and_then(|h| h.get(&tx)) else {
            return false;
        };
        let mut live = false;
        for op in ops {
            match op {
                LedgerOp::Commit(c) if c.index < at => live = true,
                LedgerOp::Revert { index } if *index < at => live = false,
                _ => break,
            }
        }
        live
    }

    pub fn final_index(&self, node: NodeId) -> Option<usize> {
        self.finals.get(&node).map(|(i, _)| *i)
    }
}
