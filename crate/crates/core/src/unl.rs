//! Unique-node-list consensus.
//!
//! Ledgers close on a fixed schedule. At each close a node proposes the
//! eligible transactions it knows, then refines its position over a few
//! exchange iterations, keeping only transactions enough of its UNL
//! proposed. The final set is executed in ascending id order atop the last
//! validated ledger, and the resulting digest is announced. A ledger is
//! validated once a supermajority of the node's UNL announced the same
//! digest.
//!
//! A transaction is eligible for a ledger when its entry stamp is at least
//! `stamp_window` ticks older than the close, so every correct node has
//! received it by then, and when the client's previous request is already
//! validated.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::bft::adversary_side;
use crate::ids::{Address, ClientId, Digest, NodeId, TxId, Value, Version};
use crate::ledger::{apply_call, TxOutcome, TxRequest, VersionedStore};
use crate::ratio::Ratio;
use crate::sim::{Actor, Behavior, Ctx, FaultPlan, SimTime};
use crate::trace::LedgerStatus;

#[derive(Clone, Debug)]
pub struct UnlParams {
    pub unl: BTreeMap<NodeId, BTreeSet<NodeId>>,
    pub interval: SimTime,
    /// Ticks between position updates within one ledger.
    pub iteration_gap: SimTime,
    /// Support required at each iteration; the last entry is the final
    /// threshold.
    pub thresholds: Vec<Ratio>,
    /// Share of the UNL that must announce a digest to validate it.
    pub validation: Ratio,
    pub stamp_window: SimTime,
    pub max_ledger_txs: usize,
    pub adversary_salt: u64,
    /// Recipients that byzantine validators treat as one side; the rest
    /// form the other side. Hash-based sides when unset.
    pub adversary_group: Option<BTreeSet<NodeId>>,
}

impl UnlParams {
    fn side(&self, height: u64, node: NodeId) -> usize {
        match &self.adversary_group {
            Some(g) => usize::from(!g.contains(&node)),
            None => adversary_side(self.adversary_salt, height, 0, node),
        }
    }
}

/// Smallest pairwise overlap `|A ∩ B| / max(|A|, |B|)` among the given
/// nodes' lists.
pub fn min_overlap(unl: &BTreeMap<NodeId, BTreeSet<NodeId>>, nodes: &BTreeSet<NodeId>) -> Ratio {
    let mut best = Ratio::ONE;
    for a in nodes {
        for b in nodes {
            if a >= b {
                continue;
            }
            let (ua, ub) = (&unl[a], &unl[b]);
            let common = ua.intersection(ub).count() as u64;
            let r = Ratio::new(common, ua.len().max(ub.len()) as u64).unwrap_or(Ratio::ONE);
            best = best.min(r);
        }
    }
    best
}

/// Ascending tx id order.
pub fn canonical_order(txs: impl IntoIterator<Item = TxRequest>) -> Vec<TxRequest> {
    let mut v: Vec<TxRequest> = txs.into_iter().collect();
    v.sort_by_key(|t| t.id);
    v.dedup_by_key(|t| t.id);
    v
}

/// Transactions proposed by at least `threshold` of `unl`.
pub fn agreed_set(
    proposals: &BTreeMap<NodeId, BTreeSet<TxId>>,
    unl: &BTreeSet<NodeId>,
    threshold: Ratio,
) -> BTreeSet<TxId> {
    let mut support: BTreeMap<TxId, usize> = BTreeMap::new();
    for (from, set) in proposals {
        if unl.contains(from) {
            for t in set {
                *support.entry(*t).or_default() += 1;
            }
        }
    }
    support
        .into_iter()
        .filter(|(_, c)| threshold.reached_by(*c, unl.len()))
        .map(|(t, _)| t)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Validation {
    pub height: u64,
    pub parent: Digest,
    pub digest: Digest,
    pub txs: Vec<TxRequest>,
}

#[derive(Clone, Debug)]
pub enum UnlMsg {
    Tx { tx: TxRequest, stamp: SimTime },
    Proposal { height: u64, iteration: usize, txs: BTreeSet<TxId> },
    Validation(Validation),
}

#[derive(Clone, Debug)]
pub enum UnlTimer {
    Close(u64),
    Iterate { height: u64, iteration: usize },
}

#[derive(Default)]
struct Round {
    proposals: BTreeMap<NodeId, BTreeSet<TxId>>,
    /// Highest iteration seen per proposer, so stale positions are ignored.
    iteration: BTreeMap<NodeId, usize>,
    position: BTreeSet<TxId>,
    validations: BTreeMap<NodeId, Validation>,
    finished: bool,
    reported_pending: bool,
}

pub struct UnlNode {
    me: NodeId,
    params: Arc<UnlParams>,
    faults: Arc<FaultPlan>,
    store: VersionedStore,
    /// Last validated ledger index and its digest.
    validated: u64,
    known: BTreeMap<TxId, (SimTime, TxRequest)>,
    committed: BTreeSet<TxId>,
    next_seq: BTreeMap<ClientId, u64>,
    entry: BTreeMap<TxId, ClientId>,
    rounds: BTreeMap<u64, Round>,
    /// Byzantine side: digests already echoed per height and side.
    echoed: BTreeSet<(u64, Digest, usize)>,
}

impl UnlNode {
    pub fn new(me: NodeId, params: Arc<UnlParams>, faults: Arc<FaultPlan>, genesis: VersionedStore) -> Self {
        Self {
            me,
            params,
            faults,
            store: genesis,
            validated: 0,
            known: BTreeMap::new(),
            committed: BTreeSet::new(),
            next_seq: BTreeMap::new(),
            entry: BTreeMap::new(),
            rounds: BTreeMap::new(),
            echoed: BTreeSet::new(),
        }
    }

    fn unl(&self) -> &BTreeSet<NodeId> {
        &self.params.unl[&self.me]
    }

    /// Equivocators split their proposals and vouch for any ledger.
    fn byzantine(&self) -> bool {
        self.faults.has(self.me, Behavior::Equivocate)
    }

    fn silent(&self) -> bool {
        self.faults.has(self.me, Behavior::Silent)
    }

    fn others(&self, ctx: &Ctx<UnlMsg, UnlTimer>) -> Vec<NodeId> {
        (0..ctx.nodes() as u32).map(NodeId).filter(|n| *n != self.me).collect()
    }

    fn broadcast(&self, ctx: &mut Ctx<UnlMsg, UnlTimer>, msg: UnlMsg) {
        if !self.silent() {
            let to = self.others(ctx);
            ctx.send_all(to, msg);
        }
    }

    fn learn(&mut self, tx: TxRequest, stamp: SimTime) -> bool {
        if self.known.contains_key(&tx.id) || self.committed.contains(&tx.id) {
            return false;
        }
        self.known.insert(tx.id, (stamp, tx));
        true
    }

    /// Initial position for the ledger closing at `now`.
    fn eligible(&self, now: SimTime) -> BTreeSet<TxId> {
        let window = self.params.stamp_window;
        let mut by_client: BTreeMap<ClientId, &TxRequest> = BTreeMap::new();
        for (stamp, tx) in self.known.values() {
            if stamp + window > now || self.faults.censors(self.me, tx.client) {
                continue;
            }
            let want = self.next_seq.get(&tx.client).copied().unwrap_or(1);
            if tx.seq == want {
                by_client.insert(tx.client, tx);
            }
        }
        canonical_order(by_client.into_values().cloned())
            .into_iter()
            .take(self.params.max_ledger_txs)
            .map(|t| t.id)
            .collect()
    }

    fn send_position(&self, height: u64, iteration: usize, txs: BTreeSet<TxId>, ctx: &mut Ctx<UnlMsg, UnlTimer>) {
        if !self.faults.has(self.me, Behavior::Equivocate) {
            self.broadcast(ctx, UnlMsg::Proposal { height, iteration, txs });
            return;
        }
        // One side sees the real position, the other an empty one.
        for to in self.others(ctx) {
            let set = if self.params.side(height, to) == 0 {
                txs.clone()
            } else {
                BTreeSet::new()
            };
            if !self.silent() {
                ctx.send(to, UnlMsg::Proposal { height, iteration, txs: set });
            }
        }
    }

    fn close(&mut self, height: u64, ctx: &mut Ctx<UnlMsg, UnlTimer>) {
        let position = self.eligible(ctx.now());
        let round = self.rounds.entry(height).or_default();
        round.position = position.clone();
        round.proposals.insert(self.me, position.clone());
        round.iteration.insert(self.me, 0);
        self.send_position(height, 0, position, ctx);
        ctx.timer(self.params.iteration_gap, UnlTimer::Iterate { height, iteration: 1 });

        // An unfinished older ledger is now overdue.
        let overdue: Vec<u64> = self
            .rounds
            .iter()
            .filter(|(h, r)| **h < height && !r.finished && !r.reported_pending)
            .map(|(h, _)| *h)
            .collect();
        for h in overdue {
            self.rounds.get_mut(&h).unwrap().reported_pending = true;
            let d = self.store.digest();
            ctx.ledger(h, LedgerStatus::Pending, d);
        }
    }

    fn iterate(&mut self, height: u64, iteration: usize, ctx: &mut Ctx<UnlMsg, UnlTimer>) {
        let thresholds = &self.params.thresholds;
        let threshold = thresholds[iteration.min(thresholds.len()) - 1];
        let unl = self.unl().clone();
        let round = self.rounds.entry(height).or_default();
        let agreed: BTreeSet<TxId> = agreed_set(&round.proposals, &unl, threshold)
            .into_iter()
            .filter(|t| self.known.contains_key(t))
            .collect();
        if iteration < thresholds.len() {
            round.position = agreed.clone();
            round.proposals.insert(self.me, agreed.clone());
            round.iteration.insert(self.me, iteration);
            self.send_position(height, iteration, agreed, ctx);
            ctx.timer(
                self.params.iteration_gap,
                UnlTimer::Iterate {
                    height,
                    iteration: iteration + 1,
                },
            );
            return;
        }
        if self.validated + 1 != height {
            // Behind: wait for the UNL's validations instead.
            return;
        }
        let txs = canonical_order(agreed.iter().map(|t| self.known[t].1.clone()));
        let mut candidate = self.store.clone();
        for (i, tx) in txs.iter().enumerate() {
            apply_call(&mut candidate, &tx.call, Version::new(height, i as u32));
        }
        let v = Validation {
            height,
            parent: self.store.digest(),
            digest: candidate.digest(),
            txs,
        };
        if !self.byzantine() {
            self.broadcast(ctx, UnlMsg::Validation(v.clone()));
        }
        self.on_validation(self.me, v, ctx);
    }

    fn on_proposal(&mut self, from: NodeId, height: u64, iteration: usize, txs: BTreeSet<TxId>) {
        if !self.unl().contains(&from) || height <= self.validated {
            return;
        }
        let round = self.rounds.entry(height).or_default();
        if round.iteration.get(&from).is_some_and(|i| *i > iteration) {
            return;
        }
        round.iteration.insert(from, iteration);
        round.proposals.insert(from, txs);
    }

    fn on_validation(&mut self, from: NodeId, v: Validation, ctx: &mut Ctx<UnlMsg, UnlTimer>) {
        if self.byzantine() {
            if from != self.me {
                self.echo(from, v, ctx);
            }
            return;
        }
        if v.height <= self.validated || !self.unl().contains(&from) {
            return;
        }
        let height = v.height;
        self.rounds.entry(height).or_default().validations.insert(from, v);
        self.try_validate(ctx);
    }

    /// A byzantine validator vouches for whatever a correct node announced,
    /// towards that node's side only.
    fn echo(&mut self, origin: NodeId, v: Validation, ctx: &mut Ctx<UnlMsg, UnlTimer>) {
        let side = self.params.side(v.height, origin);
        if self.silent() || !self.echoed.insert((v.height, v.digest, side)) {
            return;
        }
        for to in self.others(ctx) {
            if self.params.side(v.height, to) == side {
                ctx.send(to, UnlMsg::Validation(v.clone()));
            }
        }
    }

    /// Finish ledgers in order while the next one has a supermajority.
    fn try_validate(&mut self, ctx: &mut Ctx<UnlMsg, UnlTimer>) {
        loop {
            let height = self.validated + 1;
            let Some(round) = self.rounds.get(&height) else {
                return;
            };
            let parent = self.store.digest();
            let mut tally: BTreeMap<Digest, (usize, &Validation)> = BTreeMap::new();
            for v in round.validations.values() {
                if v.parent == parent {
                    tally.entry(v.digest).or_insert((0, v)).0 += 1;
                }
            }
            let need = self.params.validation;
            let size = self.unl().len();
            let Some((digest, v)) = tally
                .iter()
                .filter(|(_, (c, _))| need.reached_by(*c, size))
                .map(|(d, (_, v))| (*d, (*v).clone()))
                .next()
            else {
                return;
            };
            let own = round.validations.get(&self.me).map(|o| o.digest);
            let status = if own.is_none_or(|o| o == digest) {
                LedgerStatus::Validated
            } else {
                LedgerStatus::Diverged
            };
            self.apply(v, ctx);
            ctx.ledger(height, status, digest);
        }
    }

    fn apply(&mut self, v: Validation, ctx: &mut Ctx<UnlMsg, UnlTimer>) {
        for (i, tx) in v.txs.iter().enumerate() {
            let position = Version::new(v.height, i as u32);
            let outcome: TxOutcome = apply_call(&mut self.store, &tx.call, position);
            ctx.commit(tx.id, outcome, position);
            if let Some(client) = self.entry.remove(&tx.id) {
                ctx.ack(client, tx.id, outcome);
            }
            self.known.remove(&tx.id);
            self.committed.insert(tx.id);
            let next = self.next_seq.entry(tx.client).or_insert(1);
            *next = (*next).max(tx.seq + 1);
        }
        self.validated = v.height;
        if let Some(r) = self.rounds.get_mut(&v.height) {
            r.finished = true;
        }
        self.rounds.retain(|h, _| *h > v.height);
    }
}

impl Actor for UnlNode {
    type Msg = UnlMsg;
    type Timer = UnlTimer;

    fn on_start(&mut self, ctx: &mut Ctx<UnlMsg, UnlTimer>) {
        ctx.timer(self.params.interval, UnlTimer::Close(1));
    }

    fn on_recover(&mut self, ctx: &mut Ctx<UnlMsg, UnlTimer>) {
        let interval = self.params.interval.max(1);
        let next = ctx.now() / interval + 1;
        ctx.timer(next * interval - ctx.now(), UnlTimer::Close(next));
    }

    fn on_message(&mut self, from: NodeId, msg: UnlMsg, ctx: &mut Ctx<UnlMsg, UnlTimer>) {
        match msg {
            UnlMsg::Tx { tx, stamp } => {
                self.learn(tx, stamp);
            }
            UnlMsg::Proposal { height, iteration, txs } => self.on_proposal(from, height, iteration, txs),
            UnlMsg::Validation(v) => self.on_validation(from, v, ctx),
        }
    }

    fn on_timer(&mut self, timer: UnlTimer, ctx: &mut Ctx<UnlMsg, UnlTimer>) {
        match timer {
            UnlTimer::Close(h) => {
                ctx.timer(self.params.interval, UnlTimer::Close(h + 1));
                self.close(h, ctx);
            }
            UnlTimer::Iterate { height, iteration } => self.iterate(height, iteration, ctx),
        }
    }

    fn on_submit(&mut self, tx: TxRequest, ctx: &mut Ctx<UnlMsg, UnlTimer>) {
        self.entry.insert(tx.id, tx.client);
        let stamp = ctx.now();
        if self.learn(tx.clone(), stamp) {
            self.broadcast(ctx, UnlMsg::Tx { tx, stamp });
        }
    }

    fn read(&self, address: Address) -> Value {
        self.store.get_versioned(address).0
    }

    fn state_digest(&self) -> Digest {
        self.store.digest()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::ProgramCall;

    fn ids(v: &[u64]) -> BTreeSet<TxId> {
        v.iter().map(|x| TxId(*x)).collect()
    }

    fn unl5() -> BTreeSet<NodeId> {
        (0..5).map(NodeId).collect()
    }

    #[test]
    fn four_of_five_meets_eighty_percent() {
        let mut p = BTreeMap::new();
        for n in 0..4 {
            p.insert(NodeId(n), ids(&[7]));
        }
        p.insert(NodeId(4), ids(&[]));
        let r = Ratio::new(4, 5).unwrap();
        assert_eq!(agreed_set(&p, &unl5(), r), ids(&[7]));
        p.insert(NodeId(3), ids(&[]));
        assert!(agreed_set(&p, &unl5(), r).is_empty());
    }

    #[test]
    fn proposals_outside_the_list_do_not_count() {
        let mut p = BTreeMap::new();
        for n in 0..3 {
            p.insert(NodeId(n), ids(&[1]));
        }
        p.insert(NodeId(9), ids(&[1]));
        assert!(agreed_set(&p, &unl5(), Ratio::new(4, 5).unwrap()).is_empty());
    }

    #[test]
    fn unanimous_proposals_are_agreed() {
        let p: BTreeMap<_, _> = (0..5).map(|n| (NodeId(n), ids(&[3, 4]))).collect();
        assert_eq!(agreed_set(&p, &unl5(), Ratio::new(4, 5).unwrap()), ids(&[3, 4]));
    }

    #[test]
    fn canonical_order_ignores_input_order() {
        let txs: Vec<TxRequest> = (1..=4)
            .map(|s| TxRequest::simple(ClientId(s as u32), s, ProgramCall::Noop))
            .collect();
        let mut rev = txs.clone();
        rev.reverse();
        let a = canonical_order(txs);
        assert_eq!(a, canonical_order(rev));
        assert!(a.windows(2).all(|w| w[0].id < w[1].id));
        assert!(canonical_order(Vec::new()).is_empty());
    }

    #[test]
    fn overlap_of_two_cliques() {
        let a: BTreeSet<NodeId> = (0..5).map(NodeId).collect();
        let b: BTreeSet<NodeId> = (3..8).map(NodeId).collect();
        let unl: BTreeMap<_, _> = (0..8)
            .map(|n| (NodeId(n), if n < 3 { a.clone() } else { b.clone() }))
            .collect();
        let nodes: BTreeSet<NodeId> = [NodeId(0), NodeId(5)].into();
        assert_eq!(min_overlap(&unl, &nodes), Ratio::new(2, 5).unwrap());
    }
}
