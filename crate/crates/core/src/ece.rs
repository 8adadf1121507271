//! Execute-consensus-execute with a deterministic predecessor list.
//!
//! Clients submit atomic batches of transactions that declare the
//! addresses they read and write and, optionally, the transactions they
//! depend on. A block proposer only includes a batch once its dependencies
//! are committed or earlier in the block, executes the block and places the
//! post-state root in the header. Every validator re-executes each decided
//! block with its own, randomly interleaved, parallel schedule and
//! quarantines blocks whose root does not match.
//!
//! The schedule gives each transaction the earlier transactions of the
//! block it conflicts with or depends on. Any execution order respecting it
//! yields the serial result, so the roots of correct validators agree no
//! matter how they interleave.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::Rng;

use crate::bft::{BftApp, BftMsg, BftParams, BftReplica, BftTimer};
use crate::ids::{Address, BlockId, ClientId, Digest, NodeId, StableHasher, TxId, Value, Version};
use crate::ledger::{execute_program, Block, ExecStatus, Payload, TxOutcome, TxRequest, VersionedStore};
use crate::sim::{rng, Actor, Behavior, ByzantineSpec, Ctx, FaultPlan};

/// Transactions that commit together or not at all.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub id: u64,
    pub client: ClientId,
    pub txs: Vec<TxRequest>,
}

impl Batch {
    pub fn new(client: ClientId, txs: Vec<TxRequest>) -> Self {
        let mut h = StableHasher::new();
        h.u8(0x42).u32(client.0);
        for t in &txs {
            h.u64(t.id.0);
        }
        Self {
            id: h.finish(),
            client,
            txs,
        }
    }
}

impl Payload for Batch {
    fn payload_hash(&self) -> u64 {
        self.id
    }

    fn requests(&self) -> Vec<&TxRequest> {
        self.txs.iter().collect()
    }
}

/// Predecessor lists for the transactions of one block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schedule {
    /// Earlier transactions each one must wait for.
    pub preds: Vec<BTreeSet<usize>>,
    /// Transactions whose dependencies are neither committed nor earlier
    /// in the block.
    pub failed: BTreeSet<usize>,
}

fn conflicts(a: &TxRequest, b: &TxRequest) -> bool {
    a.declared_writes
        .iter()
        .any(|x| b.declared_writes.contains(x) || b.declared_reads.contains(x))
        || b.declared_writes.iter().any(|x| a.declared_reads.contains(x))
}

pub fn build_schedule(txs: &[TxRequest], history: &BTreeMap<TxId, TxOutcome>) -> Schedule {
    let mut preds = Vec::with_capacity(txs.len());
    let mut failed = BTreeSet::new();
    let index: BTreeMap<TxId, usize> = txs.iter().enumerate().map(|(i, t)| (t.id, i)).collect();
    for (i, t) in txs.iter().enumerate() {
        let mut p: BTreeSet<usize> = (0..i).filter(|j| conflicts(&txs[*j], t)).collect();
        for d in &t.deps {
            match index.get(d) {
                Some(j) if *j < i => {
                    p.insert(*j);
                }
                _ if history.get(d).is_some_and(|o| o.in_serial_history()) => {}
                _ => {
                    failed.insert(i);
                }
            }
        }
        preds.push(p);
    }
    Schedule { preds, failed }
}

#[derive(Clone, Debug)]
pub struct Execution {
    pub store: VersionedStore,
    pub outcomes: Vec<TxOutcome>,
    /// Completion order of the final pass.
    pub order: Vec<usize>,
    pub schedule: Schedule,
}

/// Execute a block's transactions. `batch_of[i]` is the batch of
/// transaction `i`; batches are contiguous. Ready transactions are picked
/// in random order, simulating parallel workers.
///
/// A batch fails when any of its transactions aborts, touches an address
/// it did not declare, or misses a dependency. When a batch fails the pass
/// is redone without it, so later transactions never observe its writes.
/// Only the first failing batch of a pass is dropped: earlier batches all
/// succeeded, so that failure is the one serial execution would see too.
pub fn parallel_execute(
    store: &VersionedStore,
    height: u64,
    txs: &[TxRequest],
    batch_of: &[usize],
    history: &BTreeMap<TxId, TxOutcome>,
    rng: &mut impl Rng,
) -> Execution {
    let schedule = build_schedule(txs, history);
    let mut dropped: BTreeSet<usize> = schedule.failed.iter().map(|i| batch_of[*i]).collect();
    loop {
        let included = |i: usize| !dropped.contains(&batch_of[i]);
        let mut work = store.clone();
        let mut done = vec![false; txs.len()];
        let mut bad = vec![false; txs.len()];
        let mut order = Vec::new();
        let mut waiting: Vec<usize> = (0..txs.len()).filter(|i| included(*i)).collect();
        while !waiting.is_empty() {
            let ready: Vec<usize> = waiting
                .iter()
                .copied()
                .filter(|i| schedule.preds[*i].iter().all(|p| done[*p] || !included(*p)))
                .collect();
            let pick = ready[rng.random_range(0..ready.len())];
            waiting.retain(|i| *i != pick);
            done[pick] = true;
            order.push(pick);
            let t = &txs[pick];
            // A dependency inside a dropped batch is as good as missing.
            let dep_dropped = t.deps.iter().any(|d| {
                txs.iter()
                    .position(|x| x.id == *d)
                    .is_some_and(|j| !included(j))
            });
            let r = execute_program(&work, &t.call);
            let undeclared = r.readset.iter().any(|(a, _)| !t.declared_reads.contains(a) && !t.declared_writes.contains(a))
                || r.writeset.iter().any(|(a, _)| !t.declared_writes.contains(a));
            if dep_dropped || undeclared || r.status == ExecStatus::Aborted {
                bad[pick] = true;
                continue;
            }
            work.apply_writeset(&r.writeset, Version::new(height, pick as u32))
                .expect("conflicting transactions run in block order");
        }
        match (0..txs.len()).find(|i| bad[*i]) {
            Some(i) => {
                dropped.insert(batch_of[i]);
            }
            None => {
                let outcomes = (0..txs.len())
                    .map(|i| if included(i) { TxOutcome::Committed } else { TxOutcome::Failed })
                    .collect();
                return Execution {
                    store: work,
                    outcomes,
                    order,
                    schedule,
                };
            }
        }
    }
}

/// Reference semantics: batches one after another on a scratch copy.
pub fn serial_execute(
    store: &VersionedStore,
    height: u64,
    batches: &[Vec<TxRequest>],
    history: &BTreeMap<TxId, TxOutcome>,
) -> (VersionedStore, Vec<TxOutcome>) {
    let mut state = store.clone();
    let mut outcomes = Vec::new();
    let mut seen: BTreeMap<TxId, TxOutcome> = history.clone();
    let mut index = 0u32;
    for batch in batches {
        let mut scratch = state.clone();
        let mut ok = true;
        for (k, t) in batch.iter().enumerate() {
            let deps_ok = t.deps.iter().all(|d| seen.get(d).is_some_and(|o| o.in_serial_history()));
            let r = execute_program(&scratch, &t.call);
            let declared = r.readset.iter().all(|(a, _)| t.declared_reads.contains(a) || t.declared_writes.contains(a))
                && r.writeset.iter().all(|(a, _)| t.declared_writes.contains(a));
            if !deps_ok || !declared || r.status == ExecStatus::Aborted {
                ok = false;
                break;
            }
            scratch
                .apply_writeset(&r.writeset, Version::new(height, index + k as u32))
                .expect("serial positions increase");
            // Visible to later transactions of the same batch.
            seen.insert(t.id, TxOutcome::Committed);
        }
        index += batch.len() as u32;
        let outcome = if ok { TxOutcome::Committed } else { TxOutcome::Failed };
        if ok {
            state = scratch;
        } else {
            for t in batch {
                seen.insert(t.id, TxOutcome::Failed);
            }
        }
        outcomes.extend(std::iter::repeat_n(outcome, batch.len()));
    }
    (state, outcomes)
}

fn flatten(batches: &[Batch]) -> (Vec<TxRequest>, Vec<usize>) {
    let mut txs = Vec::new();
    let mut batch_of = Vec::new();
    for (b, batch) in batches.iter().enumerate() {
        for t in &batch.txs {
            txs.push(t.clone());
            batch_of.push(b);
        }
    }
    (txs, batch_of)
}

/// Pool, committed state and block construction of one validator.
pub struct SawtoothApp {
    me: NodeId,
    tamper: bool,
    max_block_batches: usize,
    arrivals: u64,
    pool: BTreeMap<u64, (u64, Batch)>,
    done: BTreeSet<u64>,
    store: VersionedStore,
    history: BTreeMap<TxId, TxOutcome>,
}

impl SawtoothApp {
    fn root_of(&self, parent: &Block<Batch>, batches: &[Batch]) -> Digest {
        let (txs, batch_of) = flatten(batches);
        let mut rng = rng::stream(parent.id.0, "root", self.me.0 as u64);
        parallel_execute(&self.store, parent.height + 1, &txs, &batch_of, &self.history, &mut rng)
            .store
            .digest()
    }
}

impl BftApp<Batch> for SawtoothApp {
    fn add_request(&mut self, b: Batch) -> bool {
        if self.done.contains(&b.id) || self.pool.contains_key(&b.id) {
            return false;
        }
        self.arrivals += 1;
        self.pool.insert(b.id, (self.arrivals, b));
        true
    }

    fn has_pending(&self) -> bool {
        !self.pool.is_empty()
    }

    /// Arrival order, deferring batches whose dependencies are unknown.
    fn build(&mut self, _parent: &Block<Batch>, exclude: &dyn Fn(&Batch) -> bool) -> Vec<Batch> {
        let mut queue: Vec<&(u64, Batch)> = self.pool.values().filter(|(_, b)| !exclude(b)).collect();
        queue.sort_by_key(|(order, _)| *order);
        let mut out: Vec<Batch> = Vec::new();
        let mut known: BTreeSet<TxId> = BTreeSet::new();
        loop {
            let before = out.len();
            for (_, b) in &queue {
                if out.len() == self.max_block_batches {
                    break;
                }
                if out.iter().any(|x| x.id == b.id) {
                    continue;
                }
                let mut local = known.clone();
                let ready = b.txs.iter().all(|t| {
                    let ok = t.deps.iter().all(|d| local.contains(d) || self.history.contains_key(d));
                    local.insert(t.id);
                    ok
                });
                if ready {
                    known = local;
                    out.push(b.clone());
                }
            }
            if out.len() == before || out.len() == self.max_block_batches {
                return out;
            }
        }
    }

    fn validate(&self, block: &Block<Batch>) -> bool {
        let mut seen = BTreeSet::new();
        block.txs.iter().all(|b| {
            !self.done.contains(&b.id) && seen.insert(b.id) && b.txs.iter().all(|t| t.id_is_consistent())
        })
    }

    fn state_root(&self, parent: &Block<Batch>, batches: &[Batch]) -> Option<Digest> {
        let root = self.root_of(parent, batches);
        Some(if self.tamper { Digest(root.0 ^ 0x5a5a) } else { root })
    }
}

#[derive(Clone, Debug)]
pub enum SawtoothTimer {
    Bft(BftTimer),
    /// Close the batches formed from this tick's submissions.
    Flush,
}

impl From<BftTimer> for SawtoothTimer {
    fn from(t: BftTimer) -> Self {
        SawtoothTimer::Bft(t)
    }
}

type SCtx<'a> = Ctx<'a, BftMsg<Batch>, SawtoothTimer>;

pub struct SawtoothNode {
    replica: BftReplica<Batch>,
    app: SawtoothApp,
    batch_size: usize,
    entry: BTreeMap<TxId, ClientId>,
    forming: BTreeMap<ClientId, Vec<TxRequest>>,
    quarantined: BTreeSet<BlockId>,
    schedules: Vec<(u64, Schedule)>,
}

impl SawtoothNode {
    /// A validator that tampers with block roots when the fault plan marks
    /// it as equivocating; the consensus layer itself stays well-behaved.
    pub fn new(
        me: NodeId,
        params: Arc<BftParams>,
        faults: Arc<FaultPlan>,
        genesis: VersionedStore,
        batch_size: usize,
        max_block_batches: usize,
    ) -> Self {
        let tamper = faults.has(me, Behavior::Equivocate);
        let replica_faults = if tamper {
            let mut plan = (*faults).clone();
            if let Some(spec) = plan.byzantine.get_mut(&me) {
                let spec: &mut ByzantineSpec = spec;
                spec.behaviors.remove(&Behavior::Equivocate);
            }
            Arc::new(plan)
        } else {
            faults
        };
        Self {
            replica: BftReplica::new(me, params, replica_faults),
            app: SawtoothApp {
                me,
                tamper,
                max_block_batches,
                arrivals: 0,
                pool: BTreeMap::new(),
                done: BTreeSet::new(),
                store: genesis,
                history: BTreeMap::new(),
            },
            batch_size: batch_size.max(1),
            entry: BTreeMap::new(),
            forming: BTreeMap::new(),
            quarantined: BTreeSet::new(),
            schedules: Vec::new(),
        }
    }

    pub fn quarantined(&self) -> &BTreeSet<BlockId> {
        &self.quarantined
    }

    /// Schedule of every applied block, by height.
    pub fn schedules(&self) -> &[(u64, Schedule)] {
        &self.schedules
    }

    fn apply(&mut self, blocks: Vec<Block<Batch>>, ctx: &mut SCtx) {
        for b in blocks {
            let (txs, batch_of) = flatten(&b.txs);
            let exec = parallel_execute(&self.app.store, b.height, &txs, &batch_of, &self.app.history, ctx.rng());
            if b.state_root != Some(exec.store.digest()) {
                self.quarantined.insert(b.id);
                // Order these batches again in a later block.
                for batch in &b.txs {
                    self.app.done.remove(&batch.id);
                    self.app.add_request(batch.clone());
                }
                continue;
            }
            self.app.store = exec.store;
            for (i, (t, outcome)) in txs.iter().zip(&exec.outcomes).enumerate() {
                self.app.history.insert(t.id, *outcome);
                ctx.commit(t.id, *outcome, Version::new(b.height, i as u32));
                if let Some(client) = self.entry.remove(&t.id) {
                    ctx.ack(client, t.id, *outcome);
                }
            }
            for batch in &b.txs {
                self.app.pool.remove(&batch.id);
                self.app.done.insert(batch.id);
            }
            self.schedules.push((b.height, exec.schedule));
        }
        let more = self.replica.engage(&mut self.app, ctx);
        if !more.is_empty() {
            self.apply(more, ctx);
        }
    }

    fn flush(&mut self, ctx: &mut SCtx) {
        for (client, txs) in std::mem::take(&mut self.forming) {
            for chunk in txs.chunks(self.batch_size) {
                let d = self.replica.submit(&mut self.app, Batch::new(client, chunk.to_vec()), ctx);
                self.apply(d, ctx);
            }
        }
    }
}

impl Actor for SawtoothNode {
    type Msg = BftMsg<Batch>;
    type Timer = SawtoothTimer;

    fn on_start(&mut self, ctx: &mut SCtx) {
        self.replica.on_start(ctx);
    }

    fn on_recover(&mut self, ctx: &mut SCtx) {
        self.replica.on_recover(ctx);
    }

    fn on_message(&mut self, from: NodeId, msg: Self::Msg, ctx: &mut SCtx) {
        let d = self.replica.on_message(&mut self.app, from, msg, ctx);
        self.apply(d, ctx);
    }

    fn on_timer(&mut self, timer: SawtoothTimer, ctx: &mut SCtx) {
        match timer {
            SawtoothTimer::Bft(t) => {
                let d = self.replica.on_timer(&mut self.app, t, ctx);
                self.apply(d, ctx);
            }
            SawtoothTimer::Flush => self.flush(ctx),
        }
    }

    fn on_submit(&mut self, tx: TxRequest, ctx: &mut SCtx) {
        self.entry.insert(tx.id, tx.client);
        if self.forming.is_empty() {
            // Fires after every submission already queued for this tick.
            ctx.timer(0, SawtoothTimer::Flush);
        }
        self.forming.entry(tx.client).or_default().push(tx);
    }

    fn read(&self, address: Address) -> Value {
        self.app.store.get_versioned(address).0
    }

    fn state_digest(&self) -> Digest {
        self.app.store.digest()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{replay, ProgramCall};
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn transfer(client: u32, seq: u64, from: u32, to: u32, amount: i64) -> TxRequest {
        TxRequest::simple(
            ClientId(client),
            seq,
            ProgramCall::Transfer {
                from: Address(from),
                to: Address(to),
                amount,
            },
        )
    }

    fn genesis() -> VersionedStore {
        VersionedStore::genesis((0..4).map(|a| (Address(a), 10)))
    }

    #[test]
    fn conflicting_transactions_get_predecessors() {
        let txs = vec![transfer(0, 1, 0, 1, 1), transfer(1, 1, 2, 3, 1), transfer(2, 1, 1, 2, 1)];
        let s = build_schedule(&txs, &BTreeMap::new());
        assert_eq!(s.preds[0], BTreeSet::new());
        assert_eq!(s.preds[1], BTreeSet::new());
        assert_eq!(s.preds[2], [0, 1].into());
        assert!(s.failed.is_empty());
    }

    #[test]
    fn missing_dependency_fails_only_its_batch() {
        let a = transfer(0, 1, 0, 1, 1);
        let ghost = TxId(12345);
        let b = TxRequest::new(
            ClientId(1),
            1,
            ProgramCall::Noop,
            BTreeSet::new(),
            BTreeSet::new(),
            [ghost].into(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = parallel_execute(&genesis(), 1, &[a, b], &[0, 1], &BTreeMap::new(), &mut rng);
        assert_eq!(e.outcomes, vec![TxOutcome::Committed, TxOutcome::Failed]);
        assert!(e.schedule.failed.contains(&1));
    }

    #[test]
    fn a_failing_transfer_discards_its_whole_batch() {
        let ok = transfer(0, 1, 2, 3, 1);
        let short = transfer(0, 2, 0, 1, 50);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = parallel_execute(&genesis(), 1, &[ok, short], &[0, 0], &BTreeMap::new(), &mut rng);
        assert_eq!(e.outcomes, vec![TxOutcome::Failed, TxOutcome::Failed]);
        assert_eq!(e.store.digest(), genesis().digest());
    }

    #[test]
    fn undeclared_write_fails() {
        let call = ProgramCall::Set {
            address: Address(1),
            value: 3,
        };
        let t = TxRequest::new(ClientId(0), 1, call, BTreeSet::new(), [Address(2)].into(), BTreeSet::new());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = parallel_execute(&genesis(), 1, &[t], &[0], &BTreeMap::new(), &mut rng);
        assert_eq!(e.outcomes, vec![TxOutcome::Failed]);
    }

    #[test]
    fn interleavings_match_serial_replay() {
        let txs: Vec<TxRequest> = (0..12u32)
            .map(|i| transfer(i % 3, 1 + i as u64, i % 4, (i * 7 + 1) % 4, 1 + (i as i64 % 4) * 4))
            .collect();
        let batch_of: Vec<usize> = (0..12).map(|i| i / 2).collect();
        let mut digests = BTreeSet::new();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = parallel_execute(&genesis(), 1, &txs, &batch_of, &BTreeMap::new(), &mut rng);
            let kept: Vec<&ProgramCall> = txs
                .iter()
                .zip(&e.outcomes)
                .filter(|(_, o)| o.in_serial_history())
                .map(|(t, _)| &t.call)
                .collect();
            let (s, _) = replay(&genesis(), kept);
            assert_eq!(s.digest(), e.store.digest());
            digests.insert(e.store.digest());
        }
        assert_eq!(digests.len(), 1);
    }

    #[test]
    fn builder_defers_until_the_dependency_commits() {
        let first = transfer(0, 1, 0, 1, 1);
        let second = TxRequest::new(
            ClientId(0),
            2,
            ProgramCall::Noop,
            BTreeSet::new(),
            BTreeSet::new(),
            [first.id].into(),
        );
        let mut app = SawtoothApp {
            me: NodeId(0),
            tamper: false,
            max_block_batches: 10,
            arrivals: 0,
            pool: BTreeMap::new(),
            done: BTreeSet::new(),
            store: genesis(),
            history: BTreeMap::new(),
        };
        app.add_request(Batch::new(ClientId(0), vec![second.clone()]));
        let g = Block::genesis();
        assert!(app.build(&g, &|_| false).is_empty());
        app.add_request(Batch::new(ClientId(0), vec![first]));
        let built = app.build(&g, &|_| false);
        assert_eq!(built.len(), 2);
        assert_eq!(built[1].txs[0], second);
    }
}
