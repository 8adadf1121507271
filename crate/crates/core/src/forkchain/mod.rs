//! Longest-chain replication without finality.
//!
//! One node type covers round-robin proof-of-authority (strict slot owners,
//! or with out-of-turn signing), diversity-limited mining and a random-wait
//! lottery. Transactions count as committed once their block is buried
//! `confirmation_depth` deep on the local head chain; a later switch to a
//! longer branch reverts them.

mod schedule;
mod view;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::Rng;

use crate::ids::{Address, BlockId, ClientId, Digest, NodeId, TxId, Value, Version};
use crate::ledger::{TxRequest, VersionedStore};
use crate::ratio::Ratio;
use crate::sim::{Actor, Behavior, Ctx, FaultPlan, SimTime};

pub use schedule::{eligible_proposers, recently_signed, slot_owner, spacing};
pub use view::{ChainBlock, ChainView, InsertError, Switch};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProposerMode {
    /// Only the slot owner proposes, at the start of its slot.
    Aura,
    /// The slot owner proposes at once; other authorities may propose
    /// after a random delay in `[1, wiggle]` if no block arrived meanwhile.
    Clique { wiggle: SimTime },
    /// Eligible miners each mine a slot with probability `mining`, at a
    /// random offset within the slot.
    Diversity { diversity: Ratio, mining: Ratio },
    /// Every node draws a uniform wait within the slot; the first to
    /// finish while the head is unchanged proposes.
    Lottery,
}

#[derive(Clone, Debug)]
pub struct ForkParams {
    pub mode: ProposerMode,
    pub authorities: Vec<NodeId>,
    pub slot: SimTime,
    pub confirmation_depth: u64,
    pub status_interval: SimTime,
    pub max_block_txs: usize,
    /// Attach the post-state digest to each block and check it on receipt.
    pub state_roots: bool,
}

#[derive(Clone, Debug)]
pub enum ForkMsg {
    Tx(TxRequest),
    Block(ChainBlock),
    Status { head: BlockId },
    GetBlock(BlockId),
}

#[derive(Clone, Debug)]
pub enum ForkTimer {
    Slot(u64),
    Propose { slot: u64, base_height: u64 },
    Status,
}

pub struct ForkNode {
    id: NodeId,
    params: Arc<ForkParams>,
    faults: Arc<FaultPlan>,
    view: ChainView,
    committed_tip: BlockId,
    /// Known transactions in arrival order.
    known: BTreeMap<TxId, (u64, TxRequest)>,
    arrivals: u64,
    /// Requests submitted here, to be acknowledged on first commit.
    entry: BTreeMap<TxId, ClientId>,
    acked: BTreeSet<TxId>,
    orphans: BTreeMap<BlockId, Vec<ChainBlock>>,
    /// Blocks rejected for a wrong state root.
    quarantined: BTreeSet<BlockId>,
}

impl ForkNode {
    pub fn new(
        id: NodeId,
        params: Arc<ForkParams>,
        faults: Arc<FaultPlan>,
        genesis: VersionedStore,
    ) -> Self {
        let view = ChainView::new(genesis);
        let g = view.genesis();
        Self {
            id,
            params,
            faults,
            view,
            committed_tip: g,
            known: BTreeMap::new(),
            arrivals: 0,
            entry: BTreeMap::new(),
            acked: BTreeSet::new(),
            orphans: BTreeMap::new(),
            quarantined: BTreeSet::new(),
        }
    }

    pub fn view(&self) -> &ChainView {
        &self.view
    }

    pub fn committed_tip(&self) -> BlockId {
        self.committed_tip
    }

    pub fn quarantined(&self) -> &BTreeSet<BlockId> {
        &self.quarantined
    }

    fn silent(&self) -> bool {
        self.faults.has(self.id, Behavior::Silent)
    }

    fn peers(&self, ctx: &Ctx<ForkMsg, ForkTimer>) -> impl Iterator<Item = NodeId> {
        (0..ctx.nodes() as u32).map(NodeId)
    }

    fn broadcast(&self, ctx: &mut Ctx<ForkMsg, ForkTimer>, msg: ForkMsg) {
        if !self.silent() {
            let peers: Vec<NodeId> = self.peers(ctx).collect();
            ctx.send_all(peers, msg);
        }
    }

    fn learn_tx(&mut self, tx: TxRequest, ctx: &mut Ctx<ForkMsg, ForkTimer>) {
        if self.known.contains_key(&tx.id) {
            return;
        }
        self.arrivals += 1;
        self.known.insert(tx.id, (self.arrivals, tx.clone()));
        self.broadcast(ctx, ForkMsg::Tx(tx));
    }

    /// Known transactions not yet on the head chain, oldest first.
    fn pending(&self, on_chain: &BTreeSet<TxId>) -> Vec<TxRequest> {
        let mut p: Vec<&(u64, TxRequest)> = self
            .known
            .values()
            .filter(|(_, t)| !on_chain.contains(&t.id))
            .collect();
        p.sort_by_key(|(order, _)| *order);
        p.into_iter().map(|(_, t)| t.clone()).collect()
    }

    fn recent_producers(&self, tip: BlockId, count: usize) -> Vec<NodeId> {
        let path = self.view.path(tip);
        path.iter()
            .rev()
            .take(count)
            .rev()
            .map(|b| self.view.get(*b).unwrap().proposer)
            .collect()
    }

    /// Delay into `slot` after which this node tries to propose, if at all.
    fn proposal_delay(&self, slot: u64, ctx: &mut Ctx<ForkMsg, ForkTimer>) -> Option<SimTime> {
        let p = &self.params;
        if !p.authorities.contains(&self.id) {
            return None;
        }
        let head = self.view.select_head();
        match &p.mode {
            ProposerMode::Aura => (slot_owner(&p.authorities, slot) == self.id).then_some(0),
            ProposerMode::Clique { wiggle } => {
                let recent = self.recent_producers(head, p.authorities.len());
                if recently_signed(&recent, self.id, p.authorities.len()) {
                    None
                } else if slot_owner(&p.authorities, slot) == self.id {
                    Some(0)
                } else {
                    Some(ctx.rng().random_range(1..=(*wiggle).max(1)))
                }
            }
            ProposerMode::Diversity { diversity, mining } => {
                let window = spacing(*diversity, p.authorities.len()).saturating_sub(1);
                let recent = self.recent_producers(head, window);
                let eligible = eligible_proposers(&recent, *diversity, &p.authorities).ok()?;
                if !eligible.contains(&self.id) {
                    return None;
                }
                let draw = ctx.rng().random_range(0..mining.den());
                mining
                    .accepts(draw)
                    .then(|| ctx.rng().random_range(0..p.slot.max(1)))
            }
            ProposerMode::Lottery => Some(ctx.rng().random_range(0..p.slot.max(1))),
        }
    }

    fn propose(&mut self, ctx: &mut Ctx<ForkMsg, ForkTimer>) {
        let head = self.view.select_head();
        let parent = if self.faults.has(self.id, Behavior::Equivocate) {
            self.view.get(head).unwrap().parent.unwrap_or(head)
        } else {
            head
        };
        let on_chain = self.view.chain_txs(parent);
        let mut txs: Vec<TxRequest> = self
            .pending(&on_chain)
            .into_iter()
            .filter(|t| !self.faults.censors(self.id, t.client))
            .collect();
        txs.truncate(self.params.max_block_txs);
        if txs.is_empty() && ctx.draining() && !self.has_unburied(head) {
            return;
        }
        let parent_block = self.view.get(parent).unwrap().clone();
        let mut block = ChainBlock::child_of(&parent_block, self.id, txs, None);
        if self.params.state_roots {
            let mut staged = self.view.clone();
            staged.insert(block.clone()).expect("locally built block is valid");
            let root = staged.state(block.id).digest();
            block = ChainBlock::child_of(&parent_block, self.id, block.txs, Some(root));
        }
        self.broadcast(ctx, ForkMsg::Block(block.clone()));
        self.accept_block(block, None, ctx);
    }

    /// Whether the head chain has transactions not yet at commit depth.
    fn has_unburied(&self, head: BlockId) -> bool {
        let committed = self.view.chain_txs(self.committed_tip);
        self.view.chain_txs(head).len() > committed.len()
    }

    fn accept_block(&mut self, block: ChainBlock, from: Option<NodeId>, ctx: &mut Ctx<ForkMsg, ForkTimer>) {
        if self.view.contains(block.id) || self.quarantined.contains(&block.id) {
            return;
        }
        let id = block.id;
        let root = block.state_root;
        match self.view.insert(block.clone()) {
            Ok(()) => {}
            Err(InsertError::MissingParent(p)) => {
                self.orphans.entry(p).or_default().push(block);
                if let Some(from) = from {
                    if !self.silent() {
                        ctx.send(from, ForkMsg::GetBlock(p));
                    }
                }
                return;
            }
            Err(_) => return,
        }
        if self.params.state_roots && root != Some(self.view.state(id).digest()) {
            // Re-execution disagrees with the header: keep the block out of
            // fork choice. Rebuild the view without it.
            self.quarantined.insert(id);
            let mut rebuilt = ChainView::new(self.view.state(self.view.genesis()).clone());
            let mut blocks: Vec<ChainBlock> = self
                .view
                .blocks()
                .filter(|b| b.id != id && b.parent.is_some())
                .cloned()
                .collect();
            blocks.sort_by_key(|b| b.height);
            for b in blocks {
                let _ = rebuilt.insert(b);
            }
            self.view = rebuilt;
            return;
        }
        if from.is_some() {
            self.broadcast(ctx, ForkMsg::Block(block.clone()));
        }
        for tx in &block.txs {
            if !self.known.contains_key(&tx.id) {
                self.arrivals += 1;
                self.known.insert(tx.id, (self.arrivals, tx.clone()));
            }
        }
        if let Some(children) = self.orphans.remove(&id) {
            for c in children {
                self.accept_block(c, from, ctx);
            }
        }
        self.update_head(ctx);
    }

    fn update_head(&mut self, ctx: &mut Ctx<ForkMsg, ForkTimer>) {
        let head = self.view.select_head();
        let head_height = self.view.get(head).unwrap().height;
        let depth = self.params.confirmation_depth.max(1);
        let tip = self
            .view
            .ancestor_at(head, head_height.saturating_sub(depth - 1));
        if tip == self.committed_tip {
            return;
        }
        let Switch { reverted, applied } = self.view.switch(self.committed_tip, tip);
        for b in &reverted {
            for tx in self.view.get(*b).unwrap().txs.iter().rev() {
                ctx.revert(tx.id);
            }
        }
        for b in &applied {
            let block = self.view.get(*b).unwrap();
            let outcomes = self.view.outcomes(*b);
            for (i, (tx, outcome)) in block.txs.iter().zip(outcomes).enumerate() {
                ctx.commit(tx.id, *outcome, Version::new(block.height, i as u32));
                if let Some(client) = self.entry.get(&tx.id) {
                    if self.acked.insert(tx.id) {
                        ctx.ack(*client, tx.id, *outcome);
                    }
                }
            }
        }
        self.committed_tip = tip;
    }
}

impl Actor for ForkNode {
    type Msg = ForkMsg;
    type Timer = ForkTimer;

    fn on_start(&mut self, ctx: &mut Ctx<ForkMsg, ForkTimer>) {
        ctx.timer(self.params.slot, ForkTimer::Slot(1));
        ctx.timer(self.params.status_interval, ForkTimer::Status);
    }

    fn on_recover(&mut self, ctx: &mut Ctx<ForkMsg, ForkTimer>) {
        let slot = ctx.now() / self.params.slot.max(1) + 1;
        let at = slot * self.params.slot.max(1);
        ctx.timer(at - ctx.now(), ForkTimer::Slot(slot));
        ctx.timer(self.params.status_interval, ForkTimer::Status);
        let head = self.view.select_head();
        self.broadcast(ctx, ForkMsg::Status { head });
    }

    fn on_message(&mut self, from: NodeId, msg: ForkMsg, ctx: &mut Ctx<ForkMsg, ForkTimer>) {
        match msg {
            ForkMsg::Tx(tx) => self.learn_tx(tx, ctx),
            ForkMsg::Block(b) => self.accept_block(b, Some(from), ctx),
            ForkMsg::Status { head } => {
                if !self.view.contains(head) && !self.quarantined.contains(&head) && !self.silent() {
                    ctx.send(from, ForkMsg::GetBlock(head));
                }
            }
            ForkMsg::GetBlock(id) => {
                if let Some(b) = self.view.get(id) {
                    if b.parent.is_some() && !self.silent() {
                        ctx.send(from, ForkMsg::Block(b.clone()));
                    }
                }
            }
        }
    }

    fn on_timer(&mut self, timer: ForkTimer, ctx: &mut Ctx<ForkMsg, ForkTimer>) {
        match timer {
            ForkTimer::Slot(slot) => {
                ctx.timer(self.params.slot, ForkTimer::Slot(slot + 1));
                if self.silent() {
                    return;
                }
                let base_height = self.view.get(self.view.select_head()).unwrap().height;
                match self.proposal_delay(slot, ctx) {
                    Some(0) => self.propose(ctx),
                    Some(d) => ctx.timer(d, ForkTimer::Propose { slot, base_height }),
                    None => {}
                }
            }
            ForkTimer::Propose { base_height, .. } => {
                let height = self.view.get(self.view.select_head()).unwrap().height;
                if height == base_height {
                    self.propose(ctx);
                }
            }
            ForkTimer::Status => {
                ctx.timer(self.params.status_interval, ForkTimer::Status);
                let head = self.view.select_head();
                self.broadcast(ctx, ForkMsg::Status { head });
            }
        }
    }

    fn on_submit(&mut self, tx: TxRequest, ctx: &mut Ctx<ForkMsg, ForkTimer>) {
        self.entry.insert(tx.id, tx.client);
        self.learn_tx(tx, ctx);
    }

    fn read(&self, address: Address) -> Value {
        self.view.state(self.committed_tip).get_versioned(address).0
    }

    fn state_digest(&self) -> Digest {
        self.view.state(self.committed_tip).digest()
    }
}
