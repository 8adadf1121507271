//! Single block generator with an M-of-N signer quorum.
//!
//! The generator orders pending transactions by id (their hash) and asks
//! the signers to sign. A correct signer signs at most one block per
//! height. Once `threshold` signatures are in, the block is final and
//! broadcast to every node.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use super::replica::adversary_side;
use crate::ids::{Address, BlockId, ClientId, Digest, NodeId, TxId, Value, Version};
use crate::ledger::{apply_call, Block, TxRequest, VersionedStore};
use crate::sim::{Actor, Behavior, Ctx, FaultPlan, SimTime};

#[derive(Clone, Debug)]
pub struct GeneratorParams {
    pub generator: NodeId,
    pub signers: Vec<NodeId>,
    /// Signatures needed: `2F+1` for `N = 3F+1` signers.
    pub threshold: usize,
    pub interval: SimTime,
    pub max_block_txs: usize,
    pub status_interval: SimTime,
    pub adversary_salt: u64,
}

impl GeneratorParams {
    /// Tolerated faulty signers `F` for the configured signer count.
    pub fn tolerated(&self) -> usize {
        self.signers.len().saturating_sub(1) / 3
    }
}

type ChainBlock = Block<TxRequest>;

#[derive(Clone, Debug)]
pub enum ChainMsg {
    Tx(TxRequest),
    SignRequest(ChainBlock),
    Signature { height: u64, block: BlockId },
    Committed(ChainBlock),
    Status { height: u64 },
}

#[derive(Clone, Debug)]
pub enum ChainTimer {
    Generate,
    Status,
}

pub struct ChainNode {
    me: NodeId,
    params: Arc<GeneratorParams>,
    faults: Arc<FaultPlan>,
    store: VersionedStore,
    chain: Vec<ChainBlock>,
    last: ChainBlock,
    future: BTreeMap<u64, ChainBlock>,
    entry: BTreeMap<TxId, ClientId>,
    /// Signer side: heights already signed.
    signed: BTreeMap<u64, BlockId>,
    // Generator side.
    pool: BTreeMap<TxId, TxRequest>,
    committed: BTreeSet<TxId>,
    outstanding: Vec<ChainBlock>,
    signatures: BTreeMap<BlockId, BTreeSet<NodeId>>,
}

impl ChainNode {
    pub fn new(me: NodeId, params: Arc<GeneratorParams>, faults: Arc<FaultPlan>, genesis: VersionedStore) -> Self {
        Self {
            me,
            params,
            faults,
            store: genesis,
            chain: Vec::new(),
            last: Block::genesis(),
            future: BTreeMap::new(),
            entry: BTreeMap::new(),
            signed: BTreeMap::new(),
            pool: BTreeMap::new(),
            committed: BTreeSet::new(),
            outstanding: Vec::new(),
            signatures: BTreeMap::new(),
        }
    }

    pub fn chain(&self) -> &[ChainBlock] {
        &self.chain
    }

    fn is_generator(&self) -> bool {
        self.me == self.params.generator
    }

    fn send(&self, ctx: &mut Ctx<ChainMsg, ChainTimer>, to: NodeId, msg: ChainMsg) {
        if self.faults.has(self.me, Behavior::Silent) {
            return;
        }
        ctx.send(to, msg);
    }

    fn broadcast(&self, ctx: &mut Ctx<ChainMsg, ChainTimer>, msg: ChainMsg) {
        for n in 0..ctx.nodes() as u32 {
            if NodeId(n) != self.me {
                self.send(ctx, NodeId(n), msg.clone());
            }
        }
    }

    /// Pending requests in ascending id order.
    pub fn hash_order(pending: impl IntoIterator<Item = TxRequest>) -> Vec<TxRequest> {
        let mut v: Vec<TxRequest> = pending.into_iter().collect();
        v.sort_by_key(|t| t.id);
        v
    }

    fn generate(&mut self, ctx: &mut Ctx<ChainMsg, ChainTimer>) {
        if !self.outstanding.is_empty() {
            // Not final yet: ask again, signers answer idempotently.
            for b in self.outstanding.clone() {
                self.request_signatures(ctx, b);
            }
            return;
        }
        let faults = self.faults.clone();
        let me = self.me;
        let txs: Vec<TxRequest> = Self::hash_order(
            self.pool
                .values()
                .filter(|t| !faults.censors(me, t.client))
                .cloned(),
        )
        .into_iter()
        .take(self.params.max_block_txs)
        .collect();
        if txs.is_empty() {
            return;
        }
        let block = Block::child_of(&self.last, self.me, txs, None);
        if self.faults.has(self.me, Behavior::Equivocate) && block.txs.len() > 1 {
            let mut twin_txs = block.txs.clone();
            twin_txs.pop();
            let twin = Block::child_of(&self.last, self.me, twin_txs, None);
            self.outstanding = vec![block, twin];
        } else {
            self.outstanding = vec![block];
        }
        for b in self.outstanding.clone() {
            self.request_signatures(ctx, b);
        }
    }

    fn request_signatures(&self, ctx: &mut Ctx<ChainMsg, ChainTimer>, block: ChainBlock) {
        let split = self.outstanding.len() == 2;
        let version = self.outstanding.iter().position(|b| b.id == block.id).unwrap_or(0);
        for s in self.params.signers.iter() {
            let side = adversary_side(self.params.adversary_salt, block.height, 0, *s);
            if !split || side == version {
                self.send(ctx, *s, ChainMsg::SignRequest(block.clone()));
            }
        }
    }

    fn on_signature(&mut self, from: NodeId, height: u64, id: BlockId, ctx: &mut Ctx<ChainMsg, ChainTimer>) {
        if !self.is_generator() || !self.params.signers.contains(&from) {
            return;
        }
        let Some(block) = self.outstanding.iter().find(|b| b.id == id && b.height == height).cloned() else {
            return;
        };
        let sigs = self.signatures.entry(id).or_default();
        sigs.insert(from);
        if sigs.len() < self.params.threshold {
            return;
        }
        let mut block = block;
        block.signatures = sigs.clone();
        self.outstanding.clear();
        self.signatures.clear();
        self.broadcast(ctx, ChainMsg::Committed(block.clone()));
        self.apply_committed(block, ctx);
    }

    fn sign(&mut self, block: ChainBlock, ctx: &mut Ctx<ChainMsg, ChainTimer>) {
        if !self.params.signers.contains(&self.me) || block.proposer != self.params.generator {
            return;
        }
        if block.height != self.last.height + 1 || block.parent != Some(self.last.id) || !block.id_is_consistent() {
            return;
        }
        let honest = !self.faults.is_byzantine(self.me);
        match self.signed.get(&block.height) {
            Some(id) if *id != block.id && honest => return,
            _ => {}
        }
        self.signed.insert(block.height, block.id);
        let msg = ChainMsg::Signature {
            height: block.height,
            block: block.id,
        };
        self.send(ctx, self.params.generator, msg);
    }

    fn valid_certificate(&self, block: &ChainBlock) -> bool {
        block.proposer == self.params.generator
            && block.id_is_consistent()
            && block.signatures.iter().filter(|s| self.params.signers.contains(s)).count() >= self.params.threshold
    }

    fn apply_committed(&mut self, block: ChainBlock, ctx: &mut Ctx<ChainMsg, ChainTimer>) {
        if block.height <= self.last.height || !self.valid_certificate(&block) {
            return;
        }
        if block.height > self.last.height + 1 {
            self.future.insert(block.height, block);
            return;
        }
        if block.parent != Some(self.last.id) {
            return;
        }
        for (i, tx) in block.txs.iter().enumerate() {
            let position = Version::new(block.height, i as u32);
            let outcome = apply_call(&mut self.store, &tx.call, position);
            ctx.commit(tx.id, outcome, position);
            if let Some(client) = self.entry.remove(&tx.id) {
                ctx.ack(client, tx.id, outcome);
            }
            self.pool.remove(&tx.id);
            self.committed.insert(tx.id);
        }
        self.last = block.clone();
        self.chain.push(block);
        if let Some(next) = self.future.remove(&(self.last.height + 1)) {
            self.apply_committed(next, ctx);
        }
    }

    fn learn(&mut self, tx: TxRequest) {
        if !self.committed.contains(&tx.id) {
            self.pool.insert(tx.id, tx);
        }
    }
}

impl Actor for ChainNode {
    type Msg = ChainMsg;
    type Timer = ChainTimer;

    fn on_start(&mut self, ctx: &mut Ctx<ChainMsg, ChainTimer>) {
        if self.is_generator() {
            ctx.timer(self.params.interval, ChainTimer::Generate);
        }
        ctx.timer(self.params.status_interval, ChainTimer::Status);
    }

    fn on_recover(&mut self, ctx: &mut Ctx<ChainMsg, ChainTimer>) {
        self.on_start(ctx);
    }

    fn on_message(&mut self, from: NodeId, msg: ChainMsg, ctx: &mut Ctx<ChainMsg, ChainTimer>) {
        match msg {
            ChainMsg::Tx(tx) => self.learn(tx),
            ChainMsg::SignRequest(b) => self.sign(b, ctx),
            ChainMsg::Signature { height, block } => self.on_signature(from, height, block, ctx),
            ChainMsg::Committed(b) => self.apply_committed(b, ctx),
            ChainMsg::Status { height } => {
                for b in self.chain.iter().filter(|b| b.height > height).take(8) {
                    self.send(ctx, from, ChainMsg::Committed(b.clone()));
                }
            }
        }
    }

    fn on_timer(&mut self, timer: ChainTimer, ctx: &mut Ctx<ChainMsg, ChainTimer>) {
        match timer {
            ChainTimer::Generate => {
                ctx.timer(self.params.interval, ChainTimer::Generate);
                if !self.faults.has(self.me, Behavior::Silent) {
                    self.generate(ctx);
                }
            }
            ChainTimer::Status => {
                ctx.timer(self.params.status_interval, ChainTimer::Status);
                let g = self.params.generator;
                if g != self.me {
                    self.send(ctx, g, ChainMsg::Status { height: self.last.height });
                }
            }
        }
    }

    fn on_submit(&mut self, tx: TxRequest, ctx: &mut Ctx<ChainMsg, ChainTimer>) {
        self.entry.insert(tx.id, tx.client);
        if self.is_generator() {
            self.learn(tx);
        } else {
            let g = self.params.generator;
            self.send(ctx, g, ChainMsg::Tx(tx));
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

    #[test]
    fn blocks_follow_id_order_not_client_order() {
        // Search the program arguments for a pair whose ids invert their
        // submission order.
        let mk = |seq, v| {
            TxRequest::simple(
                ClientId(0),
                seq,
                ProgramCall::Set {
                    address: Address(0),
                    value: v,
                },
            )
        };
        let (a, b) = (0..100)
            .map(|v| (mk(1, 1), mk(2, v)))
            .find(|(a, b)| b.id < a.id)
            .expect("some argument inverts the pair");
        let ordered = ChainNode::hash_order(vec![a.clone(), b.clone()]);
        assert_eq!(ordered, vec![b, a]);
    }
}
