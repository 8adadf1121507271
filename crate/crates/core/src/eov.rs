//! Execute-order-validate.
//!
//! Clients send a proposal to the peers the endorsement policy names. Each
//! such peer runs the program against its committed state and returns the
//! read and write sets without applying anything. Once matching results
//! satisfy the policy, the client hands the endorsed transaction to the
//! ordering service (the BFT replica). Every peer then validates each
//! ordered transaction: policy first, then multi-version concurrency
//! control on the read versions, and applies the write sets of valid ones.
//!
//! Ordered blocks reach each organisation's peers after that
//! organisation's configured lag.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bft::{BftMsg, BftParams, BftReplica, BftTimer, QueueApp};
use crate::ids::{Address, ClientId, Digest, NodeId, StableHasher, TxId, Value, Version};
use crate::ledger::{execute_program, Block, ExecResult, ExecStatus, Payload, TxOutcome, TxRequest, VersionedStore};
use crate::sim::{Actor, Behavior, Ctx, FaultPlan, SimTime};

/// Monotone endorsement formula.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Policy {
    Peer(NodeId),
    /// Any peer of the organisation.
    Org(usize),
    And(Vec<Policy>),
    Or(Vec<Policy>),
    OutOf { k: usize, of: Vec<Policy> },
}

impl Policy {
    pub fn satisfied(&self, endorsers: &BTreeSet<NodeId>, orgs: &[Vec<NodeId>]) -> bool {
        match self {
            Policy::Peer(p) => endorsers.contains(p),
            Policy::Org(o) => orgs.get(*o).is_some_and(|peers| peers.iter().any(|p| endorsers.contains(p))),
            Policy::And(ps) => ps.iter().all(|p| p.satisfied(endorsers, orgs)),
            Policy::Or(ps) => ps.iter().any(|p| p.satisfied(endorsers, orgs)),
            Policy::OutOf { k, of } => of.iter().filter(|p| p.satisfied(endorsers, orgs)).count() >= *k,
        }
    }

    /// Peers named directly or through their organisation.
    pub fn named_peers(&self, orgs: &[Vec<NodeId>]) -> BTreeSet<NodeId> {
        match self {
            Policy::Peer(p) => [*p].into(),
            Policy::Org(o) => orgs.get(*o).map(|v| v.iter().copied().collect()).unwrap_or_default(),
            Policy::And(ps) | Policy::Or(ps) | Policy::OutOf { of: ps, .. } => {
                ps.iter().flat_map(|p| p.named_peers(orgs)).collect()
            }
        }
    }

    pub fn validate(&self, orgs: &[Vec<NodeId>]) -> Result<(), String> {
        match self {
            Policy::Peer(p) => {
                if orgs.iter().flatten().any(|q| q == p) {
                    Ok(())
                } else {
                    Err(format!("policy names {p}, which is not a peer"))
                }
            }
            Policy::Org(o) => {
                if *o < orgs.len() {
                    Ok(())
                } else {
                    Err(format!("policy names unknown organisation {o}"))
                }
            }
            Policy::And(ps) | Policy::Or(ps) => ps.iter().try_for_each(|p| p.validate(orgs)),
            Policy::OutOf { k, of } => {
                if *k == 0 || *k > of.len() {
                    return Err(format!("out_of needs 1 <= k <= {}, got {k}", of.len()));
                }
                of.iter().try_for_each(|p| p.validate(orgs))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Endorsement {
    pub endorser: NodeId,
    pub proposal: TxId,
    pub result: ExecResult,
}

/// An endorsed transaction as submitted for ordering.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FabricTx {
    pub proposal: TxRequest,
    pub endorsements: Vec<Endorsement>,
    /// Peer that notifies the client once it commits the transaction.
    pub notify: NodeId,
}

impl Payload for FabricTx {
    fn payload_hash(&self) -> u64 {
        let mut h = StableHasher::new();
        h.u64(self.proposal.id.0).u32(self.notify.0);
        for e in &self.endorsements {
            h.u32(e.endorser.0).u64(e.proposal.0);
            for (a, v) in &e.result.readset {
                h.u32(a.0).u64(v.height).u32(v.index);
            }
            for (a, v) in &e.result.writeset {
                h.u32(a.0).i64(*v);
            }
        }
        h.finish()
    }

    fn requests(&self) -> Vec<&TxRequest> {
        vec![&self.proposal]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValidationFlag {
    Valid,
    PolicyFailure,
    MvccConflict,
}

/// Endorsers satisfy the policy and all returned identical results for
/// this proposal.
pub fn policy_satisfied(policy: &Policy, orgs: &[Vec<NodeId>], tx: &FabricTx) -> bool {
    let Some(first) = tx.endorsements.first() else {
        return false;
    };
    let consistent = tx
        .endorsements
        .iter()
        .all(|e| e.proposal == tx.proposal.id && e.result == first.result);
    let endorsers: BTreeSet<NodeId> = tx.endorsements.iter().map(|e| e.endorser).collect();
    consistent && policy.satisfied(&endorsers, orgs)
}

/// Flags for a block's transactions against `store`, in block order. Valid
/// transactions' writes are visible to later ones; `store` is untouched.
pub fn mvcc_validate(policy: &Policy, orgs: &[Vec<NodeId>], height: u64, txs: &[FabricTx], store: &VersionedStore) -> Vec<ValidationFlag> {
    let mut staged = store.clone();
    commit_block(policy, orgs, height, txs, &mut staged)
        .into_iter()
        .map(|(flag, _)| flag)
        .collect()
}

/// Validate and apply a block; returns each transaction's flag and the
/// outcome to report.
pub fn commit_block(
    policy: &Policy,
    orgs: &[Vec<NodeId>],
    height: u64,
    txs: &[FabricTx],
    store: &mut VersionedStore,
) -> Vec<(ValidationFlag, TxOutcome)> {
    txs.iter()
        .enumerate()
        .map(|(i, tx)| {
            if !policy_satisfied(policy, orgs, tx) {
                return (ValidationFlag::PolicyFailure, TxOutcome::PolicyFailure);
            }
            let result = &tx.endorsements[0].result;
            if result.readset.iter().any(|(a, v)| store.version(*a) != *v) {
                return (ValidationFlag::MvccConflict, TxOutcome::MvccConflict);
            }
            match result.status {
                ExecStatus::Committed => {
                    store
                        .apply_writeset(&result.writeset, Version::new(height, i as u32))
                        .expect("block positions increase");
                    (ValidationFlag::Valid, TxOutcome::Committed)
                }
                ExecStatus::Aborted => (ValidationFlag::Valid, TxOutcome::Aborted),
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct FabricParams {
    /// Peers per organisation.
    pub orgs: Vec<Vec<NodeId>>,
    pub policy: Policy,
    pub orderers: Vec<NodeId>,
    pub ordering: Arc<BftParams>,
    /// Extra delivery delay of ordered blocks per organisation.
    pub org_lag: Vec<SimTime>,
    pub endorse_timeout: SimTime,
    pub endorse_retries: u32,
    /// Notifying peer per client; clients not listed use
    /// `peers[client mod peers]`.
    pub home: BTreeMap<ClientId, NodeId>,
    pub max_block_txs: usize,
}

impl FabricParams {
    pub fn peers(&self) -> Vec<NodeId> {
        self.orgs.iter().flatten().copied().collect()
    }

    fn home_of(&self, client: ClientId) -> NodeId {
        self.home.get(&client).copied().unwrap_or_else(|| {
            let peers = self.peers();
            peers[client.0 as usize % peers.len()]
        })
    }

    fn lag_of(&self, peer: NodeId) -> SimTime {
        self.orgs
            .iter()
            .position(|o| o.contains(&peer))
            .and_then(|o| self.org_lag.get(o).copied())
            .unwrap_or(0)
    }
}

#[derive(Clone, Debug)]
pub enum FabricMsg {
    Endorse(TxRequest),
    Endorsed(Endorsement),
    Order(FabricTx),
    Bft(BftMsg<FabricTx>),
    Deliver(Block<FabricTx>),
}

impl From<BftMsg<FabricTx>> for FabricMsg {
    fn from(m: BftMsg<FabricTx>) -> Self {
        FabricMsg::Bft(m)
    }
}

#[derive(Clone, Debug)]
pub enum FabricTimer {
    Retry { tx: TxId, attempt: u32 },
    Bft(BftTimer),
}

impl From<BftTimer> for FabricTimer {
    fn from(t: BftTimer) -> Self {
        FabricTimer::Bft(t)
    }
}

type FCtx<'a> = Ctx<'a, FabricMsg, FabricTimer>;

pub struct Peer {
    me: NodeId,
    params: Arc<FabricParams>,
    faults: Arc<FaultPlan>,
    store: VersionedStore,
    next_height: u64,
    pending: BTreeMap<u64, Block<FabricTx>>,
    executions: usize,
    flags: Vec<Vec<ValidationFlag>>,
}

impl Peer {
    pub fn executions(&self) -> usize {
        self.executions
    }

    /// Flag vector of every committed block, in height order.
    pub fn flags(&self) -> &[Vec<ValidationFlag>] {
        &self.flags
    }

    fn endorse(&mut self, from: NodeId, tx: TxRequest, ctx: &mut FCtx) {
        if !self.params.policy.named_peers(&self.params.orgs).contains(&self.me) || self.faults.has(self.me, Behavior::Silent) {
            return;
        }
        self.executions += 1;
        let result = execute_program(&self.store, &tx.call);
        ctx.send(
            from,
            FabricMsg::Endorsed(Endorsement {
                endorser: self.me,
                proposal: tx.id,
                result,
            }),
        );
    }

    fn deliver(&mut self, block: Block<FabricTx>, ctx: &mut FCtx) {
        if block.height < self.next_height || !block.id_is_consistent() {
            return;
        }
        self.pending.entry(block.height).or_insert(block);
        while let Some(b) = self.pending.remove(&self.next_height) {
            let p = &self.params;
            let results = commit_block(&p.policy, &p.orgs, b.height, &b.txs, &mut self.store);
            for (i, (tx, (_, outcome))) in b.txs.iter().zip(&results).enumerate() {
                let id = tx.proposal.id;
                ctx.commit(id, *outcome, Version::new(b.height, i as u32));
                if tx.notify == self.me {
                    ctx.ack(tx.proposal.client, id, *outcome);
                }
            }
            self.flags.push(results.into_iter().map(|(f, _)| f).collect());
            self.next_height += 1;
        }
    }
}

pub struct Orderer {
    params: Arc<FabricParams>,
    replica: BftReplica<FabricTx>,
    app: QueueApp<FabricTx>,
}

impl Orderer {
    fn handle(&mut self, decided: Vec<Block<FabricTx>>, ctx: &mut FCtx) {
        if decided.is_empty() {
            return;
        }
        for b in &decided {
            for tx in &b.txs {
                self.app.mark_ordered(tx);
            }
            for peer in self.params.peers() {
                let lag = self.params.lag_of(peer);
                ctx.send_delayed(peer, FabricMsg::Deliver(b.clone()), lag);
            }
        }
        let more = self.replica.engage(&mut self.app, ctx);
        self.handle(more, ctx);
    }
}

struct Collecting {
    tx: TxRequest,
    endorsements: BTreeMap<NodeId, Endorsement>,
}

pub struct Client {
    params: Arc<FabricParams>,
    collecting: BTreeMap<TxId, Collecting>,
}

impl Client {
    fn request(&self, tx: &TxRequest, skip: &BTreeMap<NodeId, Endorsement>, ctx: &mut FCtx) {
        for p in self.params.policy.named_peers(&self.params.orgs) {
            if !skip.contains_key(&p) {
                ctx.send(p, FabricMsg::Endorse(tx.clone()));
            }
        }
    }

    fn on_endorsed(&mut self, e: Endorsement, ctx: &mut FCtx) {
        let Some(c) = self.collecting.get_mut(&e.proposal) else {
            return;
        };
        c.endorsements.insert(e.endorser, e);
        // Group identical results; any group satisfying the policy wins.
        let mut groups: Vec<(ExecResult, Vec<Endorsement>)> = Vec::new();
        for e in c.endorsements.values() {
            match groups.iter_mut().find(|(r, _)| *r == e.result) {
                Some((_, g)) => g.push(e.clone()),
                None => groups.push((e.result.clone(), vec![e.clone()])),
            }
        }
        let p = &self.params;
        let notify = p.home_of(c.tx.client);
        let ready = groups.into_iter().find_map(|(_, endorsements)| {
            let tx = FabricTx {
                proposal: c.tx.clone(),
                endorsements,
                notify,
            };
            policy_satisfied(&p.policy, &p.orgs, &tx).then_some(tx)
        });
        if let Some(tx) = ready {
            self.collecting.remove(&tx.proposal.id);
            for o in &self.params.orderers {
                ctx.send(*o, FabricMsg::Order(tx.clone()));
            }
        }
    }
}

pub enum FabricNode {
    Peer(Peer),
    Orderer(Box<Orderer>),
    Client(Client),
}

impl FabricNode {
    pub fn peer(me: NodeId, params: Arc<FabricParams>, faults: Arc<FaultPlan>, genesis: VersionedStore) -> Self {
        FabricNode::Peer(Peer {
            me,
            params,
            faults,
            store: genesis,
            next_height: 1,
            pending: BTreeMap::new(),
            executions: 0,
            flags: Vec::new(),
        })
    }

    pub fn orderer(me: NodeId, params: Arc<FabricParams>, faults: Arc<FaultPlan>) -> Self {
        let replica = BftReplica::new(me, params.ordering.clone(), faults);
        let app = QueueApp::new(params.max_block_txs);
        FabricNode::Orderer(Box::new(Orderer { params, replica, app }))
    }

    pub fn client(params: Arc<FabricParams>) -> Self {
        FabricNode::Client(Client {
            params,
            collecting: BTreeMap::new(),
        })
    }

    pub fn as_peer(&self) -> Option<&Peer> {
        match self {
            FabricNode::Peer(p) => Some(p),
            _ => None,
        }
    }
}

impl Actor for FabricNode {
    type Msg = FabricMsg;
    type Timer = FabricTimer;

    fn on_start(&mut self, ctx: &mut FCtx) {
        if let FabricNode::Orderer(o) = self {
            o.replica.on_start(ctx);
        }
    }

    fn on_recover(&mut self, ctx: &mut FCtx) {
        if let FabricNode::Orderer(o) = self {
            o.replica.on_recover(ctx);
        }
    }

    fn on_message(&mut self, from: NodeId, msg: FabricMsg, ctx: &mut FCtx) {
        match (self, msg) {
            (FabricNode::Peer(p), FabricMsg::Endorse(tx)) => p.endorse(from, tx, ctx),
            (FabricNode::Peer(p), FabricMsg::Deliver(b)) => p.deliver(b, ctx),
            (FabricNode::Client(c), FabricMsg::Endorsed(e)) => c.on_endorsed(e, ctx),
            (FabricNode::Orderer(o), FabricMsg::Order(tx)) => {
                let d = o.replica.submit(&mut o.app, tx, ctx);
                o.handle(d, ctx);
            }
            (FabricNode::Orderer(o), FabricMsg::Bft(m)) => {
                let d = o.replica.on_message(&mut o.app, from, m, ctx);
                o.handle(d, ctx);
            }
            _ => {}
        }
    }

    fn on_timer(&mut self, timer: FabricTimer, ctx: &mut FCtx) {
        match (self, timer) {
            (FabricNode::Orderer(o), FabricTimer::Bft(t)) => {
                let d = o.replica.on_timer(&mut o.app, t, ctx);
                o.handle(d, ctx);
            }
            (FabricNode::Client(c), FabricTimer::Retry { tx, attempt }) => {
                let Some(col) = c.collecting.get(&tx) else {
                    return;
                };
                if attempt >= c.params.endorse_retries {
                    c.collecting.remove(&tx);
                    return;
                }
                let (req, have) = (col.tx.clone(), col.endorsements.clone());
                c.request(&req, &have, ctx);
                ctx.timer(
                    c.params.endorse_timeout,
                    FabricTimer::Retry {
                        tx,
                        attempt: attempt + 1,
                    },
                );
            }
            _ => {}
        }
    }

    fn on_submit(&mut self, tx: TxRequest, ctx: &mut FCtx) {
        let FabricNode::Client(c) = self else {
            return;
        };
        c.request(&tx, &BTreeMap::new(), ctx);
        ctx.timer(c.params.endorse_timeout, FabricTimer::Retry { tx: tx.id, attempt: 0 });
        c.collecting.insert(
            tx.id,
            Collecting {
                tx,
                endorsements: BTreeMap::new(),
            },
        );
    }

    fn read(&self, address: Address) -> Value {
        match self {
            FabricNode::Peer(p) => p.store.get_versioned(address).0,
            _ => 0,
        }
    }

    fn state_digest(&self) -> Digest {
        match self {
            FabricNode::Peer(p) => p.store.digest(),
            _ => Digest(0),
        }
    }

    fn is_replica(&self) -> bool {
        matches!(self, FabricNode::Peer(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::ProgramCall;

    fn orgs() -> Vec<Vec<NodeId>> {
        vec![vec![NodeId(0), NodeId(1)], vec![NodeId(2), NodeId(3)], vec![NodeId(4)]]
    }

    fn endorsed(tx: &TxRequest, by: &[u32], store: &VersionedStore) -> FabricTx {
        let result = execute_program(store, &tx.call);
        FabricTx {
            proposal: tx.clone(),
            endorsements: by
                .iter()
                .map(|n| Endorsement {
                    endorser: NodeId(*n),
                    proposal: tx.id,
                    result: result.clone(),
                })
                .collect(),
            notify: NodeId(0),
        }
    }

    fn transfer(seq: u64, from: u32, to: u32, amount: i64) -> TxRequest {
        TxRequest::simple(
            ClientId(0),
            seq,
            ProgramCall::Transfer {
                from: Address(from),
                to: Address(to),
                amount,
            },
        )
    }

    #[test]
    fn and_of_two_orgs_needs_one_peer_of_each() {
        let p = Policy::And(vec![Policy::Org(0), Policy::Org(1)]);
        let store = VersionedStore::genesis([(Address(0), 10), (Address(1), 0)]);
        let tx = transfer(1, 0, 1, 5);
        assert!(policy_satisfied(&p, &orgs(), &endorsed(&tx, &[1, 2], &store)));
        assert!(!policy_satisfied(&p, &orgs(), &endorsed(&tx, &[0, 1], &store)));
    }

    #[test]
    fn mismatching_results_fail_the_policy() {
        let p = Policy::And(vec![Policy::Org(0), Policy::Org(1)]);
        let store = VersionedStore::genesis([(Address(0), 10), (Address(1), 0)]);
        let tx = transfer(1, 0, 1, 5);
        let mut ftx = endorsed(&tx, &[0, 2], &store);
        ftx.endorsements[1].result.writeset[0].1 += 1;
        assert!(!policy_satisfied(&p, &orgs(), &ftx));
    }

    #[test]
    fn two_of_three_with_one_endorser_fails() {
        let p = Policy::OutOf {
            k: 2,
            of: vec![Policy::Org(0), Policy::Org(1), Policy::Org(2)],
        };
        let store = VersionedStore::genesis([(Address(0), 10)]);
        let tx = TxRequest::simple(ClientId(0), 1, ProgramCall::Noop);
        assert!(!policy_satisfied(&p, &orgs(), &endorsed(&tx, &[0], &store)));
        assert!(policy_satisfied(&p, &orgs(), &endorsed(&tx, &[0, 4], &store)));
    }

    #[test]
    fn later_reader_of_a_written_key_conflicts() {
        let p = Policy::Org(0);
        let store = VersionedStore::genesis([(Address(0), 10), (Address(1), 0)]);
        // Both endorsed against genesis; the second reads address 0 at the
        // version the first one overwrites.
        let a = endorsed(&transfer(1, 0, 1, 5), &[0], &store);
        let b = endorsed(&transfer(2, 0, 1, 2), &[0], &store);
        let flags = mvcc_validate(&p, &orgs(), 1, &[a, b], &store);
        assert_eq!(flags, vec![ValidationFlag::Valid, ValidationFlag::MvccConflict]);
    }

    #[test]
    fn policy_failure_takes_precedence() {
        let p = Policy::Org(1);
        let store = VersionedStore::genesis([(Address(0), 10), (Address(1), 0)]);
        let a = endorsed(&transfer(1, 0, 1, 5), &[0], &store);
        assert_eq!(mvcc_validate(&p, &orgs(), 1, &[a], &store), vec![ValidationFlag::PolicyFailure]);
    }

    #[test]
    fn only_valid_writesets_are_applied() {
        let p = Policy::Org(0);
        let mut store = VersionedStore::genesis([(Address(0), 10), (Address(1), 0)]);
        let a = endorsed(&transfer(1, 0, 1, 5), &[0], &store);
        let b = endorsed(&transfer(2, 0, 1, 2), &[0], &store);
        let out = commit_block(&p, &orgs(), 1, &[a, b], &mut store);
        assert_eq!(out[1].1, TxOutcome::MvccConflict);
        assert_eq!(store.get(Address(0)), Some(5));
        let before = store.digest();
        commit_block(&p, &orgs(), 2, &[], &mut store);
        assert_eq!(store.digest(), before);
    }
}
