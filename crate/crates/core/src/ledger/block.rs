use std::collections::BTreeSet;
use std::fmt::Debug;

use super::tx::TxRequest;
use crate::ids::{BlockId, Digest, NodeId, StableHasher, TxId};

/// Something a block can carry.
pub trait Payload: Clone + Debug + PartialEq + Eq {
    /// Content hash folded into the block id.
    fn payload_hash(&self) -> u64;
    /// Client requests carried by this item, in order.
    fn requests(&self) -> Vec<&TxRequest>;
}

impl Payload for TxRequest {
    fn payload_hash(&self) -> u64 {
        self.id.0
    }

    fn requests(&self) -> Vec<&TxRequest> {
        vec![self]
    }
}

/// Hash-identified batch of payloads. Signatures are attestations and are
/// not part of the id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block<P> {
    pub id: BlockId,
    pub parent: Option<BlockId>,
    pub height: u64,
    pub proposer: NodeId,
    pub txs: Vec<P>,
    pub state_root: Option<Digest>,
    pub signatures: BTreeSet<NodeId>,
}

impl<P: Payload> Block<P> {
    /// The shared genesis block: height 0, no parent, no proposer content.
    pub fn genesis() -> Self {
        let mut b = Block {
            id: BlockId(0),
            parent: None,
            height: 0,
            proposer: NodeId(0),
            txs: Vec::new(),
            state_root: None,
            signatures: BTreeSet::new(),
        };
        b.id = b.compute_id();
        b
    }

    pub fn child_of(
        parent: &Block<P>,
        proposer: NodeId,
        txs: Vec<P>,
        state_root: Option<Digest>,
    ) -> Self {
        Self::new(Some(parent.id), parent.height + 1, proposer, txs, state_root)
    }

    pub fn new(
        parent: Option<BlockId>,
        height: u64,
        proposer: NodeId,
        txs: Vec<P>,
        state_root: Option<Digest>,
    ) -> Self {
        let mut b = Block {
            id: BlockId(0),
            parent,
            height,
            proposer,
            txs,
            state_root,
            signatures: BTreeSet::new(),
        };
        b.id = b.compute_id();
        b
    }

    pub fn compute_id(&self) -> BlockId {
        let mut h = StableHasher::new();
        h.u8(0x42);
        match self.parent {
            Some(p) => h.u8(1).u64(p.0),
            None => h.u8(0),
        };
        h.u64(self.height).u32(self.proposer.0);
        h.u64(self.txs.len() as u64);
        for tx in &self.txs {
            h.u64(tx.payload_hash());
        }
        match self.state_root {
            Some(r) => h.u8(1).u64(r.0),
            None => h.u8(0),
        };
        BlockId(h.finish())
    }

    /// True when the stored id matches the header content.
    pub fn id_is_consistent(&self) -> bool {
        self.id == self.compute_id()
    }

    pub fn requests(&self) -> impl Iterator<Item = &TxRequest> + '_ {
        self.txs.iter().flat_map(|p| p.requests())
    }

    pub fn tx_ids(&self) -> Vec<TxId> {
        self.requests().map(|r| r.id).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::ClientId;
    use crate::ledger::ProgramCall;

    #[test]
    fn child_height_and_parent_link() {
        let g = Block::<TxRequest>::genesis();
        assert_eq!(g.parent, None);
        let tx = TxRequest::simple(ClientId(0), 1, ProgramCall::Noop);
        let b = Block::child_of(&g, NodeId(2), vec![tx], None);
        assert_eq!(b.height, 1);
        assert_eq!(b.parent, Some(g.id));
        assert!(b.id_is_consistent());
    }

    #[test]
    fn id_binds_header_but_not_signatures() {
        let g = Block::<TxRequest>::genesis();
        let mut b = Block::child_of(&g, NodeId(1), vec![], None);
        let id = b.id;
        b.signatures.insert(NodeId(3));
        assert!(b.id_is_consistent());
        b.state_root = Some(Digest(1));
        assert!(!b.id_is_consistent());
        assert_ne!(b.compute_id(), id);
        let other_proposer = Block::<TxRequest>::child_of(&g, NodeId(2), vec![], None);
        assert_ne!(other_proposer.id, id);
    }
}
