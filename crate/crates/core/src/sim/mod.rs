//! Deterministic discrete-event engine.
//!
//! Events are processed in `(time, seq)` order where `seq` is a per-run
//! counter assigned at scheduling time, so simultaneous events run in FIFO
//! order. Every random draw comes from a [`rng::stream`] keyed by the run
//! seed and a stable label; nothing iterates a hash map. A run is therefore
//! a pure function of its inputs.
//!
//! Protocol engines implement [`Actor`]. Handlers never touch the queue
//! directly; they push sends, timers and observations into a [`Ctx`] which
//! the loop drains after the handler returns.

pub mod fault;
pub mod network;
pub mod rng;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Debug;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{Address, ClientId, Digest, NodeId, Position, TxId, Value};
use crate::ledger::{TxOutcome, TxRequest};
use crate::trace::{Correctness, Event, LedgerStatus, Trace};

pub use fault::{Behavior, ByzantineSpec, CrashSpec, FaultPlan};
pub use network::{Delivery, NetworkModel, Partition};

/// Logical time in ticks.
pub type SimTime = u64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("event scheduled at {at} while the clock reads {now}")]
    ScheduleInPast { now: SimTime, at: SimTime },
    #[error("{node} at t={time}: {msg}")]
    Engine {
        node: NodeId,
        time: SimTime,
        msg: String,
    },
    #[error("event limit of {0} exceeded")]
    EventLimit(u64),
}

pub trait Actor {
    type Msg: Clone + Debug;
    type Timer: Clone + Debug;

    fn on_start(&mut self, _ctx: &mut Ctx<Self::Msg, Self::Timer>) {}
    fn on_message(&mut self, from: NodeId, msg: Self::Msg, ctx: &mut Ctx<Self::Msg, Self::Timer>);
    fn on_timer(&mut self, timer: Self::Timer, ctx: &mut Ctx<Self::Msg, Self::Timer>);
    fn on_submit(&mut self, tx: TxRequest, ctx: &mut Ctx<Self::Msg, Self::Timer>);
    fn on_recover(&mut self, _ctx: &mut Ctx<Self::Msg, Self::Timer>) {}

    /// Serve a client read from the node's current committed state.
    fn read(&self, address: Address) -> Value;
    fn state_digest(&self) -> Digest;
    /// Replicas hold world state and report final digests. Auxiliary
    /// actors (clients, orderers) do not.
    fn is_replica(&self) -> bool {
        true
    }
}

#[derive(Debug)]
enum Output<M, T> {
    Send { to: NodeId, msg: M, extra: SimTime },
    Timer { delay: SimTime, timer: T },
    Observe(Event),
    Fail(String),
}

/// Handler context: the clock, the node's random stream and an output
/// buffer.
pub struct Ctx<'a, M, T> {
    now: SimTime,
    me: NodeId,
    nodes: usize,
    draining: bool,
    rng: &'a mut ChaCha8Rng,
    out: Vec<Output<M, T>>,
}

impl<M, T> Ctx<'_, M, T> {
    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn me(&self) -> NodeId {
        self.me
    }

    /// Total number of actors in the run.
    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// True once the workload window has closed and the run is flushing.
    pub fn draining(&self) -> bool {
        self.draining
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }

    /// Send through the network model. Sending to oneself delivers at the
    /// current tick without touching the network.
    pub fn send(&mut self, to: NodeId, msg: M) {
        self.out.push(Output::Send { to, msg, extra: 0 });
    }

    /// Send with an additional fixed delay on top of the network delay.
    pub fn send_delayed(&mut self, to: NodeId, msg: M, extra: SimTime) {
        self.out.push(Output::Send { to, msg, extra });
    }

    pub fn send_all(&mut self, targets: impl IntoIterator<Item = NodeId>, msg: M)
    where
        M: Clone,
    {
        let me = self.me;
        for t in targets {
            if t != me {
                self.send(t, msg.clone());
            }
        }
    }

    pub fn timer(&mut self, delay: SimTime, timer: T) {
        self.out.push(Output::Timer { delay, timer });
    }

    pub fn commit(&mut self, tx: TxId, outcome: TxOutcome, position: Position) {
        let node = self.me;
        self.out.push(Output::Observe(Event::Commit {
            node,
            tx,
            outcome,
            position,
        }));
    }

    pub fn revert(&mut self, tx: TxId) {
        let node = self.me;
        self.out.push(Output::Observe(Event::Revert { node, tx }));
    }

    pub fn ack(&mut self, client: ClientId, tx: TxId, outcome: TxOutcome) {
        let node = self.me;
        self.out.push(Output::Observe(Event::Ack {
            client,
            tx,
            node,
            outcome,
        }));
    }

    pub fn ledger(&mut self, height: u64, status: LedgerStatus, digest: Digest) {
        let node = self.me;
        self.out.push(Output::Observe(Event::Ledger {
            node,
            height,
            status,
            digest,
        }));
    }

    /// Report an internal inconsistency; the run aborts after this handler.
    pub fn fail(&mut self, msg: impl Into<String>) {
        self.out.push(Output::Fail(msg.into()));
    }
}

/// Where a client's read-after-ack is served.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ReadRouting {
    /// The node that acknowledged the transaction.
    #[default]
    AckingNode,
    /// A fixed node per client; clients not listed use the acking node.
    Designated(BTreeMap<ClientId, NodeId>),
}

/// After every effectful ack, the client reads each address the
/// transaction wrote, `delay` ticks later.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadPolicy {
    #[serde(default)]
    pub after_ack: bool,
    #[serde(default)]
    pub delay: SimTime,
    #[serde(default)]
    pub routing: ReadRouting,
}

#[derive(Clone, Debug)]
pub struct Submission {
    pub time: SimTime,
    pub tx: TxRequest,
    pub entry: NodeId,
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub protocol: String,
    pub seed: u64,
    /// End of the workload window.
    pub until: SimTime,
    /// Timers firing later than `until + drain` are discarded so the queue
    /// empties; messages are always delivered.
    pub drain: SimTime,
    pub network: NetworkModel,
    pub faults: FaultPlan,
    pub reads: ReadPolicy,
    pub genesis: Vec<(Address, Value)>,
    pub max_events: u64,
}

#[derive(Debug)]
enum Kind<M, T> {
    Deliver { from: NodeId, to: NodeId, msg: M },
    TimerFired { node: NodeId, timer: T },
    ClientSubmit { tx: TxRequest, entry: NodeId },
    ClientRead { client: ClientId, node: NodeId, address: Address },
    Crash(NodeId),
    Recover(NodeId),
}

/// Event queue ordered by `(time, seq)`.
pub struct Queue<E> {
    now: SimTime,
    seq: u64,
    events: BTreeMap<(SimTime, u64), E>,
}

impl<E> Default for Queue<E> {
    fn default() -> Self {
        Self {
            now: 0,
            seq: 0,
            events: BTreeMap::new(),
        }
    }
}

impl<E> Queue<E> {
    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn schedule(&mut self, at: SimTime, e: E) -> Result<u64, SimError> {
        if at < self.now {
            return Err(SimError::ScheduleInPast { now: self.now, at });
        }
        let id = self.seq;
        self.seq += 1;
        self.events.insert((at, id), e);
        Ok(id)
    }

    pub fn pop(&mut self) -> Option<(SimTime, u64, E)> {
        let ((t, s), e) = self.events.pop_first()?;
        self.now = t;
        Some((t, s, e))
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

struct Loop<'c, A: Actor> {
    cfg: &'c SimConfig,
    queue: Queue<Kind<A::Msg, A::Timer>>,
    actors: Vec<A>,
    rngs: Vec<ChaCha8Rng>,
    net_rng: ChaCha8Rng,
    crashed: BTreeSet<NodeId>,
    trace: Trace,
    /// Transactions by id, for read-after-ack scheduling.
    txs: BTreeMap<TxId, TxRequest>,
}

impl<A: Actor> Loop<'_, A> {
    fn dispatch(
        &mut self,
        node: NodeId,
        f: impl FnOnce(&mut A, &mut Ctx<A::Msg, A::Timer>),
    ) -> Result<(), SimError> {
        let now = self.queue.now();
        let nodes = self.actors.len();
        let mut ctx = Ctx {
            now,
            me: node,
            nodes,
            draining: now >= self.cfg.until,
            rng: &mut self.rngs[node.index()],
            out: Vec::new(),
        };
        f(&mut self.actors[node.index()], &mut ctx);
        let out = ctx.out;
        for o in out {
            match o {
                Output::Send { to, msg, extra } => {
                    if to == node {
                        self.queue.schedule(now, Kind::Deliver { from: node, to, msg })?;
                        continue;
                    }
                    if to.index() >= nodes {
                        return Err(SimError::Engine {
                            node,
                            time: now,
                            msg: format!("send to unknown node {to}"),
                        });
                    }
                    match self.cfg.network.route(node, to, now, &mut self.net_rng) {
                        Delivery::At(t) => {
                            self.queue
                                .schedule(t + extra, Kind::Deliver { from: node, to, msg })?;
                        }
                        Delivery::Dropped => {}
                    }
                }
                Output::Timer { delay, timer } => {
                    self.queue.schedule(now + delay, Kind::TimerFired { node, timer })?;
                }
                Output::Observe(e) => {
                    if let Event::Ack {
                        client,
                        tx,
                        node: acker,
                        outcome: TxOutcome::Committed,
                    } = &e
                    {
                        self.schedule_reads(*client, *tx, *acker)?;
                    }
                    self.trace.push(now, e);
                }
                Output::Fail(msg) => {
                    return Err(SimError::Engine {
                        node,
                        time: now,
                        msg,
                    })
                }
            }
        }
        Ok(())
    }

    fn schedule_reads(&mut self, client: ClientId, tx: TxId, acker: NodeId) -> Result<(), SimError> {
        let policy = &self.cfg.reads;
        if !policy.after_ack {
            return Ok(());
        }
        let Some(req) = self.txs.get(&tx) else {
            return Ok(());
        };
        let node = match &policy.routing {
            ReadRouting::AckingNode => acker,
            ReadRouting::Designated(m) => m.get(&client).copied().unwrap_or(acker),
        };
        let at = self.queue.now() + policy.delay;
        for address in req.call.natural_writes() {
            self.queue.schedule(
                at,
                Kind::ClientRead {
                    client,
                    node,
                    address,
                },
            )?;
        }
        Ok(())
    }
}

/// Run `actors` (indexed by node id) over `workload` and return the trace.
pub fn run<A: Actor>(
    actors: Vec<A>,
    workload: Vec<Submission>,
    cfg: &SimConfig,
) -> Result<Trace, SimError> {
    let n = actors.len();
    let rngs = (0..n as u64).map(|i| rng::stream(cfg.seed, "node", i)).collect();
    let mut lp = Loop {
        cfg,
        queue: Queue::default(),
        actors,
        rngs,
        net_rng: rng::stream(cfg.seed, "network", 0),
        crashed: BTreeSet::new(),
        trace: Trace::default(),
        txs: BTreeMap::new(),
    };
    let replicas = lp.actors.iter().filter(|a| a.is_replica()).count();
    lp.trace.push(
        0,
        Event::Meta {
            protocol: cfg.protocol.clone(),
            seed: cfg.seed,
            replicas,
        },
    );
    let mut genesis = cfg.genesis.clone();
    genesis.sort();
    for (address, value) in genesis {
        lp.trace.push(0, Event::Genesis { address, value });
    }

    for c in &cfg.faults.crashes {
        lp.queue.schedule(c.at, Kind::Crash(c.node))?;
        if let Some(r) = c.recover {
            lp.queue.schedule(r, Kind::Recover(c.node))?;
        }
    }
    for s in workload {
        lp.txs.insert(s.tx.id, s.tx.clone());
        lp.queue.schedule(
            s.time,
            Kind::ClientSubmit {
                tx: s.tx,
                entry: s.entry,
            },
        )?;
    }
    for i in 0..n {
        lp.dispatch(NodeId(i as u32), |a, ctx| a.on_start(ctx))?;
    }

    let timer_cutoff = cfg.until + cfg.drain;
    let mut processed = 0u64;
    let mut last_live = 0;
    while let Some((time, _, kind)) = lp.queue.pop() {
        processed += 1;
        if !matches!(kind, Kind::TimerFired { .. }) || time <= timer_cutoff {
            last_live = time;
        }
        if processed > cfg.max_events {
            return Err(SimError::EventLimit(cfg.max_events));
        }
        match kind {
            Kind::Deliver { from, to, msg } => {
                if !lp.crashed.contains(&to) {
                    lp.dispatch(to, |a, ctx| a.on_message(from, msg, ctx))?;
                }
            }
            Kind::TimerFired { node, timer } => {
                if time <= timer_cutoff && !lp.crashed.contains(&node) {
                    lp.dispatch(node, |a, ctx| a.on_timer(timer, ctx))?;
                }
            }
            Kind::ClientSubmit { tx, entry } => {
                lp.trace.push(
                    time,
                    Event::Submit {
                        tx: tx.clone(),
                        entry,
                    },
                );
                if !lp.crashed.contains(&entry) {
                    lp.dispatch(entry, |a, ctx| a.on_submit(tx, ctx))?;
                }
            }
            Kind::ClientRead {
                client,
                node,
                address,
            } => {
                if !lp.crashed.contains(&node) {
                    let value = lp.actors[node.index()].read(address);
                    lp.trace.push(
                        time,
                        Event::Read {
                            client,
                            node,
                            address,
                            value,
                        },
                    );
                }
            }
            Kind::Crash(node) => {
                lp.crashed.insert(node);
            }
            Kind::Recover(node) => {
                if lp.crashed.remove(&node) {
                    lp.dispatch(node, |a, ctx| a.on_recover(ctx))?;
                }
            }
        }
    }

    let end = last_live.max(cfg.until);
    let replica_ids: Vec<NodeId> = (0..n)
        .filter(|i| lp.actors[*i].is_replica())
        .map(|i| NodeId(i as u32))
        .collect();
    for &node in &replica_ids {
        let correctness = if cfg.faults.is_byzantine(node) {
            Correctness::Byzantine
        } else if lp.crashed.contains(&node) {
            Correctness::CrashedUncovered
        } else {
            Correctness::Correct
        };
        lp.trace.push(end, Event::NodeStatus { node, correctness });
    }
    for &node in &replica_ids {
        let digest = lp.actors[node.index()].state_digest();
        lp.trace.push(end, Event::Final { node, digest });
    }
    Ok(lp.trace)
}
