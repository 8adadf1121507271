//! A BFT validator: the rule core wrapped with block transport, timers,
//! catch-up and the byzantine behaviours.
//!
//! The replica only orders blocks. It hands decided blocks back to the
//! caller, which owns execution, so the same replica serves as a ledger
//! node, an ordering-service node or a consensus layer for batch engines.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use super::rules::{Action, Quorum, Round, RoundState, Step, Vote};
use crate::ids::{BlockId, Digest, NodeId, StableHasher};
use crate::ledger::{Block, Payload};
use crate::sim::{Behavior, Ctx, FaultPlan, SimTime};

/// Block construction and validation supplied by the engine.
pub trait BftApp<P> {
    /// Store a request; true if it was not known yet.
    fn add_request(&mut self, p: P) -> bool;
    /// Requests are waiting to be ordered.
    fn has_pending(&self) -> bool;
    /// Candidate payloads for a block extending `parent`, skipping those
    /// `exclude` rejects.
    fn build(&mut self, parent: &Block<P>, exclude: &dyn Fn(&P) -> bool) -> Vec<P>;
    /// Whether a proposal extending the local chain is acceptable.
    fn validate(&self, block: &Block<P>) -> bool;
    /// Optional post-state root to place in a new block.
    fn state_root(&self, _parent: &Block<P>, _txs: &[P]) -> Option<Digest> {
        None
    }
}

#[derive(Clone, Debug)]
pub struct BftParams {
    pub validators: Vec<NodeId>,
    pub quorum: Quorum,
    pub propose_timeout: SimTime,
    pub vote_timeout: SimTime,
    /// Added per round to every timeout.
    pub timeout_step: SimTime,
    pub status_interval: SimTime,
    /// Salt shared by colluding byzantine validators to pick which honest
    /// nodes see which version of an equivocated block.
    pub adversary_salt: u64,
}

impl BftParams {
    fn timeout(&self, step: Step, round: Round) -> SimTime {
        let base = match step {
            Step::Propose => self.propose_timeout,
            _ => self.vote_timeout,
        };
        base + self.timeout_step * round as SimTime
    }
}

#[derive(Clone, Debug)]
pub enum BftMsg<P> {
    Request(P),
    Proposal {
        height: u64,
        round: Round,
        block: Block<P>,
        valid_round: Option<Round>,
    },
    Vote { height: u64, vote: Vote<BlockId> },
    /// Sent by an equivocating leader to fellow byzantine validators.
    Collude {
        height: u64,
        round: Round,
        versions: [BlockId; 2],
    },
    Status { height: u64 },
    Decided {
        block: Block<P>,
        cert: BTreeSet<NodeId>,
    },
}

#[derive(Clone, Debug)]
pub enum BftTimer {
    Timeout { height: u64, round: Round, step: Step },
    Status,
}

/// Which of two honest groups `node` belongs to for an equivocation.
pub fn adversary_side(salt: u64, height: u64, round: Round, node: NodeId) -> usize {
    (StableHasher::new()
        .u64(salt)
        .u64(height)
        .u32(round)
        .u32(node.0)
        .finish()
        & 1) as usize
}

pub struct BftReplica<P> {
    me: NodeId,
    params: Arc<BftParams>,
    faults: Arc<FaultPlan>,
    /// Last decided block (genesis at start).
    last: Block<P>,
    log: Vec<(Block<P>, BTreeSet<NodeId>)>,
    rs: RoundState<BlockId>,
    blocks: BTreeMap<BlockId, Block<P>>,
    /// Messages for heights not reached yet.
    future: BTreeMap<u64, Vec<(NodeId, BftMsg<P>)>>,
    /// Own consensus messages of the current round, for retransmission.
    sent: Vec<BftMsg<P>>,
    collusions: BTreeMap<(u64, Round), [BlockId; 2]>,
}

const FUTURE_WINDOW: u64 = 4;
const CATCH_UP_BATCH: usize = 8;

impl<P: Payload> BftReplica<P> {
    pub fn new(me: NodeId, params: Arc<BftParams>, faults: Arc<FaultPlan>) -> Self {
        let genesis = Block::genesis();
        let rs = RoundState::new(1, me, params.validators.clone(), params.quorum);
        Self {
            me,
            params,
            faults,
            last: genesis,
            log: Vec::new(),
            rs,
            blocks: BTreeMap::new(),
            future: BTreeMap::new(),
            sent: Vec::new(),
            collusions: BTreeMap::new(),
        }
    }

    /// Height currently being agreed on.
    pub fn height(&self) -> u64 {
        self.rs.height
    }

    pub fn last_decided(&self) -> &Block<P> {
        &self.last
    }

    pub fn decided(&self) -> impl Iterator<Item = &Block<P>> + '_ {
        self.log.iter().map(|(b, _)| b)
    }

    fn is_validator(&self) -> bool {
        self.params.validators.contains(&self.me)
    }

    fn has(&self, b: Behavior) -> bool {
        self.faults.has(self.me, b)
    }

    fn send<M: From<BftMsg<P>>, T>(&self, ctx: &mut Ctx<M, T>, to: NodeId, msg: BftMsg<P>) {
        if to != self.me && !self.has(Behavior::Silent) {
            ctx.send(to, msg.into());
        }
    }

    fn broadcast<M: From<BftMsg<P>>, T>(&self, ctx: &mut Ctx<M, T>, msg: BftMsg<P>) {
        for v in self.params.validators.iter() {
            self.send(ctx, *v, msg.clone());
        }
    }

    fn arm<M, T: From<BftTimer>>(&self, ctx: &mut Ctx<M, T>, step: Step, round: Round) {
        let delay = self.params.timeout(step, round);
        ctx.timer(
            delay,
            BftTimer::Timeout {
                height: self.rs.height,
                round,
                step,
            }
            .into(),
        );
    }

    pub fn on_start<M, T: From<BftTimer>>(&mut self, ctx: &mut Ctx<M, T>) {
        ctx.timer(self.params.status_interval, BftTimer::Status.into());
    }

    /// Resume after a crash: re-arm timers and ask peers where they are.
    pub fn on_recover<M: From<BftMsg<P>>, T: From<BftTimer>>(&mut self, ctx: &mut Ctx<M, T>) {
        ctx.timer(self.params.status_interval, BftTimer::Status.into());
        if self.rs.started() {
            let r = self.rs.round;
            self.arm(ctx, Step::Precommit, r);
        }
        self.broadcast(ctx, BftMsg::Status { height: self.rs.height });
    }

    /// A request entered at this node (from a client or another engine).
    pub fn submit<M: From<BftMsg<P>>, T: From<BftTimer>>(
        &mut self,
        app: &mut impl BftApp<P>,
        p: P,
        ctx: &mut Ctx<M, T>,
    ) -> Vec<Block<P>> {
        if app.add_request(p.clone()) {
            self.broadcast(ctx, BftMsg::Request(p));
        }
        self.engage(app, ctx)
    }

    /// Start the current height if there is something to order.
    pub fn engage<M: From<BftMsg<P>>, T: From<BftTimer>>(
        &mut self,
        app: &mut impl BftApp<P>,
        ctx: &mut Ctx<M, T>,
    ) -> Vec<Block<P>> {
        if self.rs.started() || !self.is_validator() || !app.has_pending() {
            return Vec::new();
        }
        self.start(app, ctx)
    }

    fn start<M: From<BftMsg<P>>, T: From<BftTimer>>(
        &mut self,
        app: &mut impl BftApp<P>,
        ctx: &mut Ctx<M, T>,
    ) -> Vec<Block<P>> {
        let acts = self.start_round(app, 0);
        self.perform(app, acts, ctx)
    }

    fn start_round(&mut self, app: &mut impl BftApp<P>, round: Round) -> Vec<Action<BlockId>> {
        let mut built = None;
        let acts = self.rs.start_round(round, || {
            let b = build_block(&self.last, self.me, &self.faults, app);
            let id = b.id;
            built = Some(b);
            id
        });
        if let Some(b) = built {
            self.blocks.insert(b.id, b);
        }
        acts
    }

    /// Drive the core until it settles, executing its actions.
    fn perform<M: From<BftMsg<P>>, T: From<BftTimer>>(
        &mut self,
        app: &mut impl BftApp<P>,
        mut acts: Vec<Action<BlockId>>,
        ctx: &mut Ctx<M, T>,
    ) -> Vec<Block<P>> {
        let mut decided = Vec::new();
        loop {
            for a in acts {
                match a {
                    Action::Propose {
                        round,
                        value,
                        valid_round,
                    } => {
                        self.sent.clear();
                        let block = self.blocks[&value].clone();
                        let height = self.rs.height;
                        self.rs.on_proposal(self.me, round, value, valid_round, true);
                        self.send_proposal(ctx, height, round, block, valid_round);
                    }
                    Action::Vote(v) => {
                        if v.round() != self.sent_round() {
                            self.sent.clear();
                        }
                        self.rs.on_vote(self.me, v.clone());
                        let msg = BftMsg::Vote {
                            height: self.rs.height,
                            vote: v,
                        };
                        self.sent.push(msg.clone());
                        self.send_vote(ctx, msg);
                    }
                    Action::Timeout { step, round } => {
                        if step == Step::Propose {
                            self.sent.clear();
                        }
                        self.arm(ctx, step, round);
                    }
                    Action::Decide { round, value } => {
                        let block = self.blocks[&value].clone();
                        let cert = self.rs.precommit_signers(round, &value);
                        decided.extend(self.finish_height(app, block, cert, ctx));
                        return decided;
                    }
                }
            }
            acts = {
                let mut built = None;
                let a = self.rs.evaluate(|| {
                    let b = build_block(&self.last, self.me, &self.faults, app);
                    let id = b.id;
                    built = Some(b);
                    id
                });
                if let Some(b) = built {
                    self.blocks.insert(b.id, b);
                }
                a
            };
            if acts.is_empty() {
                return decided;
            }
        }
    }

    fn sent_round(&self) -> Round {
        match self.sent.last() {
            Some(BftMsg::Vote { vote, .. }) => vote.round(),
            Some(BftMsg::Proposal { round, .. }) => *round,
            _ => Round::MAX,
        }
    }

    fn send_proposal<M: From<BftMsg<P>>, T>(
        &mut self,
        ctx: &mut Ctx<M, T>,
        height: u64,
        round: Round,
        block: Block<P>,
        valid_round: Option<Round>,
    ) {
        let honest = BftMsg::Proposal {
            height,
            round,
            block: block.clone(),
            valid_round,
        };
        self.sent.push(honest.clone());
        if !self.has(Behavior::Equivocate) || block.txs.is_empty() {
            self.broadcast(ctx, honest);
            return;
        }
        // Second version: the same block minus its last payload.
        let mut txs = block.txs.clone();
        txs.pop();
        let twin = Block::child_of(&self.last, self.me, txs, block.state_root);
        let versions = [block.id, twin.id];
        self.blocks.insert(twin.id, twin.clone());
        self.collusions.insert((height, round), versions);
        let salt = self.params.adversary_salt;
        for v in self.params.validators.clone() {
            if self.faults.is_byzantine(v) {
                self.send(
                    ctx,
                    v,
                    BftMsg::Collude {
                        height,
                        round,
                        versions,
                    },
                );
                self.send(ctx, v, honest.clone());
                continue;
            }
            let b = if adversary_side(salt, height, round, v) == 0 {
                block.clone()
            } else {
                twin.clone()
            };
            self.send(
                ctx,
                v,
                BftMsg::Proposal {
                    height,
                    round,
                    block: b,
                    valid_round,
                },
            );
        }
        self.split_votes(ctx, height, round, versions);
    }

    /// Colluding validators prevote and precommit each version to the
    /// honest group that received it.
    fn split_votes<M: From<BftMsg<P>>, T>(
        &self,
        ctx: &mut Ctx<M, T>,
        height: u64,
        round: Round,
        versions: [BlockId; 2],
    ) {
        let salt = self.params.adversary_salt;
        for v in self.params.validators.iter() {
            if self.faults.is_byzantine(*v) {
                continue;
            }
            let value = Some(versions[adversary_side(salt, height, round, *v)]);
            for vote in [
                Vote::Prevote { round, value },
                Vote::Precommit { round, value },
            ] {
                self.send(ctx, *v, BftMsg::Vote { height, vote });
            }
        }
    }

    fn send_vote<M: From<BftMsg<P>>, T>(&self, ctx: &mut Ctx<M, T>, msg: BftMsg<P>) {
        if let BftMsg::Vote { height, vote } = &msg {
            if self.has(Behavior::Equivocate) && self.collusions.contains_key(&(*height, vote.round())) {
                // Split votes already went out to honest nodes.
                for v in self.params.validators.iter() {
                    if self.faults.is_byzantine(*v) {
                        self.send(ctx, *v, msg.clone());
                    }
                }
                return;
            }
        }
        self.broadcast(ctx, msg);
    }

    fn finish_height<M: From<BftMsg<P>>, T: From<BftTimer>>(
        &mut self,
        app: &mut impl BftApp<P>,
        block: Block<P>,
        cert: BTreeSet<NodeId>,
        ctx: &mut Ctx<M, T>,
    ) -> Vec<Block<P>> {
        let mut decided = vec![block.clone()];
        self.log.push((block.clone(), cert));
        self.last = block;
        let next = self.last.height + 1;
        self.rs = RoundState::new(next, self.me, self.params.validators.clone(), self.params.quorum);
        self.blocks.clear();
        self.sent.clear();
        self.collusions.retain(|(h, _), _| *h >= next);
        decided.extend(self.resume_height(app, ctx));
        decided
    }

    /// Start the new height if engaged and replay buffered messages.
    fn resume_height<M: From<BftMsg<P>>, T: From<BftTimer>>(
        &mut self,
        app: &mut impl BftApp<P>,
        ctx: &mut Ctx<M, T>,
    ) -> Vec<Block<P>> {
        let h = self.rs.height;
        self.future.retain(|fh, _| *fh >= h);
        let buffered = self.future.remove(&h).unwrap_or_default();
        let mut decided = Vec::new();
        if !buffered.is_empty() && self.is_validator() {
            decided.extend(self.start(app, ctx));
        } else {
            decided.extend(self.engage(app, ctx));
        }
        for (from, msg) in buffered {
            decided.extend(self.on_message(app, from, msg, ctx));
        }
        decided
    }

    pub fn on_message<M: From<BftMsg<P>>, T: From<BftTimer>>(
        &mut self,
        app: &mut impl BftApp<P>,
        from: NodeId,
        msg: BftMsg<P>,
        ctx: &mut Ctx<M, T>,
    ) -> Vec<Block<P>> {
        let h = self.rs.height;
        match msg {
            BftMsg::Request(p) => self.submit(app, p, ctx),
            BftMsg::Status { height } => {
                if height < h {
                    for (b, cert) in self
                        .log
                        .iter()
                        .filter(|(b, _)| b.height >= height)
                        .take(CATCH_UP_BATCH)
                    {
                        self.send(
                            ctx,
                            from,
                            BftMsg::Decided {
                                block: b.clone(),
                                cert: cert.clone(),
                            },
                        );
                    }
                }
                Vec::new()
            }
            BftMsg::Decided { block, cert } => {
                if block.height != h
                    || block.parent != Some(self.last.id)
                    || !block.id_is_consistent()
                    || cert.iter().filter(|n| self.rs.is_validator(**n)).count()
                        < self.params.quorum.threshold()
                {
                    if block.height > h && block.height <= h + FUTURE_WINDOW {
                        self.future
                            .entry(block.height)
                            .or_default()
                            .push((from, BftMsg::Decided { block, cert }));
                    }
                    return Vec::new();
                }
                self.finish_height(app, block, cert, ctx)
            }
            BftMsg::Collude {
                height,
                round,
                versions,
            } => {
                if self.has(Behavior::Equivocate) && height >= h {
                    self.collusions.insert((height, round), versions);
                    self.split_votes(ctx, height, round, versions);
                }
                Vec::new()
            }
            BftMsg::Proposal {
                height,
                round,
                block,
                valid_round,
            } => {
                if height > h {
                    self.buffer(from, height, BftMsg::Proposal {
                        height,
                        round,
                        block,
                        valid_round,
                    });
                    return Vec::new();
                }
                if height < h {
                    return Vec::new();
                }
                let valid = block.height == h
                    && block.parent == Some(self.last.id)
                    && block.id_is_consistent()
                    && app.validate(&block);
                let id = block.id;
                if self.rs.on_proposal(from, round, id, valid_round, valid) {
                    self.blocks.insert(id, block);
                }
                self.after_input(app, ctx)
            }
            BftMsg::Vote { height, vote } => {
                if height > h {
                    self.buffer(from, height, BftMsg::Vote { height, vote });
                    return Vec::new();
                }
                if height < h {
                    return Vec::new();
                }
                self.rs.on_vote(from, vote);
                self.after_input(app, ctx)
            }
        }
    }

    fn buffer(&mut self, from: NodeId, height: u64, msg: BftMsg<P>) {
        if height <= self.rs.height + FUTURE_WINDOW {
            self.future.entry(height).or_default().push((from, msg));
        }
    }

    fn after_input<M: From<BftMsg<P>>, T: From<BftTimer>>(
        &mut self,
        app: &mut impl BftApp<P>,
        ctx: &mut Ctx<M, T>,
    ) -> Vec<Block<P>> {
        if !self.is_validator() {
            return Vec::new();
        }
        if !self.rs.started() {
            return self.start(app, ctx);
        }
        self.perform(app, Vec::new(), ctx)
    }

    pub fn on_timer<M: From<BftMsg<P>>, T: From<BftTimer>>(
        &mut self,
        app: &mut impl BftApp<P>,
        timer: BftTimer,
        ctx: &mut Ctx<M, T>,
    ) -> Vec<Block<P>> {
        match timer {
            BftTimer::Status => {
                ctx.timer(self.params.status_interval, BftTimer::Status.into());
                self.broadcast(ctx, BftMsg::Status { height: self.rs.height });
                self.engage(app, ctx)
            }
            BftTimer::Timeout { height, round, step } => {
                if height != self.rs.height {
                    return Vec::new();
                }
                // Retransmit this round's messages; partitions drop rather
                // than delay.
                for m in self.sent.clone() {
                    match m {
                        BftMsg::Vote { .. } => self.send_vote(ctx, m),
                        _ => self.broadcast(ctx, m),
                    }
                }
                let mut built = None;
                let acts = self.rs.on_timeout(step, round, || {
                    let b = build_block(&self.last, self.me, &self.faults, app);
                    let id = b.id;
                    built = Some(b);
                    id
                });
                if let Some(b) = built {
                    self.blocks.insert(b.id, b);
                }
                self.perform(app, acts, ctx)
            }
        }
    }
}

fn build_block<P: Payload>(
    last: &Block<P>,
    me: NodeId,
    faults: &FaultPlan,
    app: &mut impl BftApp<P>,
) -> Block<P> {
    let censor = |p: &P| p.requests().iter().any(|r| faults.censors(me, r.client));
    let txs = app.build(last, &censor);
    let root = app.state_root(last, &txs);
    Block::child_of(last, me, txs, root)
}
