//! Ledger validators on top of the BFT replica: every validator executes
//! each decided block serially against its own store.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use super::replica::{BftApp, BftMsg, BftParams, BftReplica, BftTimer};
use crate::ids::{Address, ClientId, Digest, NodeId, TxId, Value, Version};
use crate::ledger::{apply_call, Block, Payload, TxRequest, VersionedStore};
use crate::sim::{Actor, Ctx, FaultPlan};

/// Block-building discipline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ordering {
    /// Arrival order.
    Arrival,
    /// Per-client counters: a request is eligible only when its sequence
    /// number is the next one expected for its client.
    ClientCounter,
}

pub struct LedgerApp {
    ordering: Ordering,
    max_block_txs: usize,
    arrivals: u64,
    pool: BTreeMap<TxId, (u64, TxRequest)>,
    committed: BTreeSet<TxId>,
    next_seq: BTreeMap<ClientId, u64>,
}

impl LedgerApp {
    pub fn new(ordering: Ordering, max_block_txs: usize) -> Self {
        Self {
            ordering,
            max_block_txs,
            arrivals: 0,
            pool: BTreeMap::new(),
            committed: BTreeSet::new(),
            next_seq: BTreeMap::new(),
        }
    }

    fn expected(&self, client: ClientId) -> u64 {
        self.next_seq.get(&client).copied().unwrap_or(1)
    }

    fn mark_committed(&mut self, tx: &TxRequest) {
        self.pool.remove(&tx.id);
        self.committed.insert(tx.id);
        let next = self.next_seq.entry(tx.client).or_insert(1);
        *next = (*next).max(tx.seq + 1);
    }
}

impl BftApp<TxRequest> for LedgerApp {
    fn add_request(&mut self, tx: TxRequest) -> bool {
        if self.committed.contains(&tx.id) || self.pool.contains_key(&tx.id) {
            return false;
        }
        self.arrivals += 1;
        self.pool.insert(tx.id, (self.arrivals, tx));
        true
    }

    /// A request stuck behind a missing predecessor does not count: it
    /// would only produce empty blocks.
    fn has_pending(&self) -> bool {
        match self.ordering {
            Ordering::Arrival => !self.pool.is_empty(),
            Ordering::ClientCounter => self.pool.values().any(|(_, t)| t.seq == self.expected(t.client)),
        }
    }

    fn build(&mut self, _parent: &Block<TxRequest>, exclude: &dyn Fn(&TxRequest) -> bool) -> Vec<TxRequest> {
        let mut queue: Vec<&(u64, TxRequest)> = self.pool.values().filter(|(_, t)| !exclude(t)).collect();
        queue.sort_by_key(|(order, _)| *order);
        match self.ordering {
            Ordering::Arrival => queue
                .into_iter()
                .take(self.max_block_txs)
                .map(|(_, t)| t.clone())
                .collect(),
            Ordering::ClientCounter => {
                let mut next: BTreeMap<ClientId, u64> = BTreeMap::new();
                let mut out = Vec::new();
                let mut taken = BTreeSet::new();
                // Repeat passes so a request that arrived before its
                // predecessor still makes it into the same block.
                loop {
                    let before = out.len();
                    for (_, t) in &queue {
                        if out.len() == self.max_block_txs {
                            break;
                        }
                        let want = *next.entry(t.client).or_insert_with(|| self.expected(t.client));
                        if t.seq == want && taken.insert(t.id) {
                            next.insert(t.client, want + 1);
                            out.push(t.clone());
                        }
                    }
                    if out.len() == before || out.len() == self.max_block_txs {
                        return out;
                    }
                }
            }
        }
    }

    fn validate(&self, block: &Block<TxRequest>) -> bool {
        let mut seen = BTreeSet::new();
        let mut next: BTreeMap<ClientId, u64> = BTreeMap::new();
        block.txs.iter().all(|t| {
            if !t.id_is_consistent() || self.committed.contains(&t.id) || !seen.insert(t.id) {
                return false;
            }
            if self.ordering == Ordering::ClientCounter {
                let want = next.entry(t.client).or_insert_with(|| self.expected(t.client));
                if t.seq != *want {
                    return false;
                }
                *want += 1;
            }
            true
        })
    }
}

/// A validator that also holds and executes the ledger.
pub struct BftNode {
    replica: BftReplica<TxRequest>,
    app: LedgerApp,
    store: VersionedStore,
    entry: BTreeMap<TxId, ClientId>,
}

impl BftNode {
    pub fn new(
        me: NodeId,
        params: Arc<BftParams>,
        faults: Arc<FaultPlan>,
        app: LedgerApp,
        genesis: VersionedStore,
    ) -> Self {
        Self {
            replica: BftReplica::new(me, params, faults),
            app,
            store: genesis,
            entry: BTreeMap::new(),
        }
    }

    pub fn replica(&self) -> &BftReplica<TxRequest> {
        &self.replica
    }

    fn apply(&mut self, blocks: Vec<Block<TxRequest>>, ctx: &mut Ctx<BftMsg<TxRequest>, BftTimer>) {
        for b in blocks {
            for (i, tx) in b.txs.iter().enumerate() {
                // A block decided without this node's validation (caught up
                // through a certificate) may repeat a committed request.
                if self.app.committed.contains(&tx.id) {
                    continue;
                }
                let position = Version::new(b.height, i as u32);
                let outcome = apply_call(&mut self.store, &tx.call, position);
                ctx.commit(tx.id, outcome, position);
                if let Some(client) = self.entry.remove(&tx.id) {
                    ctx.ack(client, tx.id, outcome);
                }
                self.app.mark_committed(tx);
            }
        }
        let more = self.replica.engage(&mut self.app, ctx);
        if !more.is_empty() {
            self.apply(more, ctx);
        }
    }
}

impl Actor for BftNode {
    type Msg = BftMsg<TxRequest>;
    type Timer = BftTimer;

    fn on_start(&mut self, ctx: &mut Ctx<Self::Msg, BftTimer>) {
        self.replica.on_start(ctx);
    }

    fn on_recover(&mut self, ctx: &mut Ctx<Self::Msg, BftTimer>) {
        self.replica.on_recover(ctx);
    }

    fn on_message(&mut self, from: NodeId, msg: Self::Msg, ctx: &mut Ctx<Self::Msg, BftTimer>) {
        let decided = self.replica.on_message(&mut self.app, from, msg, ctx);
        self.apply(decided, ctx);
    }

    fn on_timer(&mut self, timer: BftTimer, ctx: &mut Ctx<Self::Msg, BftTimer>) {
        let decided = self.replica.on_timer(&mut self.app, timer, ctx);
        self.apply(decided, ctx);
    }

    fn on_submit(&mut self, tx: TxRequest, ctx: &mut Ctx<Self::Msg, BftTimer>) {
        self.entry.insert(tx.id, tx.client);
        let decided = self.replica.submit(&mut self.app, tx, ctx);
        self.apply(decided, ctx);
    }

    fn read(&self, address: Address) -> Value {
        self.store.get_versioned(address).0
    }

    fn state_digest(&self) -> Digest {
        self.store.digest()
    }
}

/// Arrival-ordered pool of opaque payloads, for engines that execute
/// after ordering and only need the replica to sequence their items.
pub struct QueueApp<P> {
    max_block_items: usize,
    arrivals: u64,
    pool: BTreeMap<u64, (u64, P)>,
    ordered: BTreeSet<u64>,
}

impl<P: Payload> QueueApp<P> {
    pub fn new(max_block_items: usize) -> Self {
        Self {
            max_block_items,
            arrivals: 0,
            pool: BTreeMap::new(),
            ordered: BTreeSet::new(),
        }
    }

    pub fn mark_ordered(&mut self, p: &P) {
        let h = p.payload_hash();
        self.pool.remove(&h);
        self.ordered.insert(h);
    }
}

impl<P: Payload> BftApp<P> for QueueApp<P> {
    fn add_request(&mut self, p: P) -> bool {
        let h = p.payload_hash();
        if self.ordered.contains(&h) || self.pool.contains_key(&h) {
            return false;
        }
        self.arrivals += 1;
        self.pool.insert(h, (self.arrivals, p));
        true
    }

    fn has_pending(&self) -> bool {
        !self.pool.is_empty()
    }

    fn build(&mut self, _parent: &Block<P>, exclude: &dyn Fn(&P) -> bool) -> Vec<P> {
        let mut queue: Vec<&(u64, P)> = self.pool.values().filter(|(_, p)| !exclude(p)).collect();
        queue.sort_by_key(|(order, _)| *order);
        queue
            .into_iter()
            .take(self.max_block_items)
            .map(|(_, p)| p.clone())
            .collect()
    }

    fn validate(&self, block: &Block<P>) -> bool {
        let mut seen = BTreeSet::new();
        block.txs.iter().all(|p| {
            let h = p.payload_hash();
            !self.ordered.contains(&h) && seen.insert(h)
        })
    }
}
