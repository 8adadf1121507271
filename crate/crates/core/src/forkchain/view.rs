use std::collections::{BTreeMap, BTreeSet};

use crate::ids::{BlockId, TxId};
use crate::ledger::{apply_call, Block, TxOutcome, TxRequest, VersionedStore};
use crate::ids::Version;

pub type ChainBlock = Block<TxRequest>;

#[derive(Debug, PartialEq, Eq)]
pub enum InsertError {
    Duplicate,
    MissingParent(BlockId),
    /// Height, id or content does not fit the parent chain.
    Invalid(String),
}

/// Block tree with cached per-block world states.
#[derive(Clone, Debug)]
pub struct ChainView {
    genesis: BlockId,
    blocks: BTreeMap<BlockId, ChainBlock>,
    states: BTreeMap<BlockId, (VersionedStore, Vec<TxOutcome>)>,
}

/// What switching the committed tip from one block to another entails.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Switch {
    /// Abandoned blocks, newest first.
    pub reverted: Vec<BlockId>,
    /// Adopted blocks, oldest first.
    pub applied: Vec<BlockId>,
}

impl ChainView {
    pub fn new(genesis_state: VersionedStore) -> Self {
        let g = ChainBlock::genesis();
        let id = g.id;
        Self {
            genesis: id,
            blocks: [(id, g)].into(),
            states: [(id, (genesis_state, Vec::new()))].into(),
        }
    }

    pub fn genesis(&self) -> BlockId {
        self.genesis
    }

    pub fn get(&self, id: BlockId) -> Option<&ChainBlock> {
        self.blocks.get(&id)
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.blocks.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> impl Iterator<Item = &ChainBlock> + '_ {
        self.blocks.values()
    }

    /// Transactions on the chain ending at `tip` (inclusive).
    pub fn chain_txs(&self, tip: BlockId) -> BTreeSet<TxId> {
        self.path(tip)
            .iter()
            .flat_map(|b| self.blocks[b].txs.iter().map(|t| t.id))
            .collect()
    }

    /// Block ids from the first block after genesis up to `tip`.
    pub fn path(&self, tip: BlockId) -> Vec<BlockId> {
        let mut out = Vec::new();
        let mut cur = tip;
        while cur != self.genesis {
            out.push(cur);
            cur = self.blocks[&cur].parent.expect("non-genesis block has a parent");
        }
        out.reverse();
        out
    }

    /// The ancestor of `id` at `height` (or `id` itself).
    pub fn ancestor_at(&self, id: BlockId, height: u64) -> BlockId {
        let mut cur = id;
        while self.blocks[&cur].height > height {
            cur = self.blocks[&cur].parent.expect("height above zero");
        }
        cur
    }

    pub fn insert(&mut self, block: ChainBlock) -> Result<(), InsertError> {
        if self.blocks.contains_key(&block.id) {
            return Err(InsertError::Duplicate);
        }
        let Some(parent_id) = block.parent else {
            return Err(InsertError::Invalid("second genesis".into()));
        };
        let Some(parent) = self.blocks.get(&parent_id) else {
            return Err(InsertError::MissingParent(parent_id));
        };
        if block.height != parent.height + 1 {
            return Err(InsertError::Invalid(format!(
                "height {} on parent at {}",
                block.height, parent.height
            )));
        }
        if !block.id_is_consistent() {
            return Err(InsertError::Invalid("id does not match header".into()));
        }
        let earlier = self.chain_txs(parent_id);
        let mut inside = BTreeSet::new();
        if block
            .txs
            .iter()
            .any(|t| earlier.contains(&t.id) || !inside.insert(t.id))
        {
            return Err(InsertError::Invalid("transaction included twice".into()));
        }
        let mut store = self.states[&parent_id].0.clone();
        let outcomes = block
            .txs
            .iter()
            .enumerate()
            .map(|(i, t)| apply_call(&mut store, &t.call, Version::new(block.height, i as u32)))
            .collect();
        self.states.insert(block.id, (store, outcomes));
        self.blocks.insert(block.id, block);
        Ok(())
    }

    pub fn state(&self, id: BlockId) -> &VersionedStore {
        &self.states[&id].0
    }

    pub fn outcomes(&self, id: BlockId) -> &[TxOutcome] {
        &self.states[&id].1
    }

    /// Longest chain; among equally long tips the smallest id.
    pub fn select_head(&self) -> BlockId {
        self.blocks
            .values()
            .max_by(|a, b| a.height.cmp(&b.height).then(b.id.cmp(&a.id)))
            .expect("tree holds genesis")
            .id
    }

    /// Blocks to undo and redo when moving from `from` to `to`.
    pub fn switch(&self, from: BlockId, to: BlockId) -> Switch {
        let (mut a, mut b) = (from, to);
        let mut reverted = Vec::new();
        let mut applied = Vec::new();
        let parent = |x: BlockId| self.blocks[&x].parent.expect("walk stops at genesis");
        while a != b {
            let ha = self.blocks[&a].height;
            let hb = self.blocks[&b].height;
            if ha >= hb {
                reverted.push(a);
                a = parent(a);
            }
            if hb >= ha {
                applied.push(b);
                b = parent(b);
            }
        }
        applied.reverse();
        Switch { reverted, applied }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::{ClientId, NodeId};
    use crate::ledger::{replay, ProgramCall};

    fn tx(seq: u64) -> TxRequest {
        TxRequest::simple(ClientId(0), seq, ProgramCall::Noop)
    }

    fn child(view: &mut ChainView, parent: BlockId, proposer: u32, txs: Vec<TxRequest>) -> BlockId {
        let p = view.get(parent).unwrap().clone();
        let b = ChainBlock::child_of(&p, NodeId(proposer), txs, None);
        let id = b.id;
        view.insert(b).unwrap();
        id
    }

    #[test]
    fn single_chain_head_is_its_tip() {
        let mut v = ChainView::new(VersionedStore::new());
        let g = v.genesis();
        let b1 = child(&mut v, g, 0, vec![]);
        let b2 = child(&mut v, b1, 1, vec![]);
        let b3 = child(&mut v, b2, 2, vec![]);
        assert_eq!(v.select_head(), b3);
    }

    #[test]
    fn equal_length_tips_break_ties_by_smallest_id() {
        let mut v = ChainView::new(VersionedStore::new());
        let g = v.genesis();
        let a1 = child(&mut v, g, 0, vec![]);
        let a2 = child(&mut v, a1, 1, vec![]);
        let b1 = child(&mut v, g, 2, vec![]);
        let b2 = child(&mut v, b1, 3, vec![]);
        assert_eq!(v.select_head(), a2.min(b2));
        let b3 = child(&mut v, b2, 0, vec![]);
        assert_eq!(v.select_head(), b3);
    }

    #[test]
    fn switch_reverts_newest_first_then_applies_oldest_first() {
        let mut v = ChainView::new(VersionedStore::new());
        let g = v.genesis();
        let b1 = child(&mut v, g, 0, vec![tx(1)]);
        let b2 = child(&mut v, b1, 1, vec![tx(2)]);
        let c1 = child(&mut v, g, 2, vec![tx(3)]);
        let c2 = child(&mut v, c1, 3, vec![]);
        let c3 = child(&mut v, c2, 0, vec![]);
        let s = v.switch(b2, c3);
        assert_eq!(s.reverted, vec![b2, b1]);
        assert_eq!(s.applied, vec![c1, c2, c3]);
    }

    #[test]
    fn extending_the_head_reverts_nothing() {
        let mut v = ChainView::new(VersionedStore::new());
        let g = v.genesis();
        let b1 = child(&mut v, g, 0, vec![]);
        let b2 = child(&mut v, b1, 1, vec![]);
        let s = v.switch(b1, b2);
        assert!(s.reverted.is_empty());
        assert_eq!(s.applied, vec![b2]);
        let back = v.switch(b2, b1);
        assert_eq!(back.reverted, vec![b2]);
        assert!(back.applied.is_empty());
    }

    #[test]
    fn cached_state_equals_replay_of_the_chain() {
        let g0 = VersionedStore::genesis([(crate::ids::Address(0), 10)]);
        let mut v = ChainView::new(g0.clone());
        let g = v.genesis();
        let t = |s, amount| {
            TxRequest::simple(
                ClientId(1),
                s,
                ProgramCall::Transfer {
                    from: crate::ids::Address(0),
                    to: crate::ids::Address(1),
                    amount,
                },
            )
        };
        let b1 = child(&mut v, g, 0, vec![t(1, 4), t(2, 4)]);
        let b2 = child(&mut v, b1, 1, vec![t(3, 4)]);
        let calls: Vec<ProgramCall> = v
            .path(b2)
            .iter()
            .flat_map(|b| v.get(*b).unwrap().txs.iter().map(|t| t.call.clone()))
            .collect();
        let (store, outcomes) = replay(&g0, &calls);
        assert_eq!(v.state(b2).digest(), store.digest());
        assert_eq!(outcomes[2], TxOutcome::Aborted);
        assert_eq!(v.outcomes(b2), &[TxOutcome::Aborted]);
    }

    #[test]
    fn duplicate_inclusion_is_rejected() {
        let mut v = ChainView::new(VersionedStore::new());
        let g = v.genesis();
        let b1 = child(&mut v, g, 0, vec![tx(1)]);
        let p = v.get(b1).unwrap().clone();
        let dup = ChainBlock::child_of(&p, NodeId(1), vec![tx(1)], None);
        assert!(matches!(v.insert(dup), Err(InsertError::Invalid(_))));
    }
}
