//! Hand-built traces for checker tests.
#![allow(dead_code)]

use permtx::ids::{Address, ClientId, Digest, NodeId, TxId, Value, Version};
use permtx::ledger::{replay, ProgramCall, TxOutcome, TxRequest, VersionedStore};
use permtx::trace::{Correctness, Event, Trace};

pub struct Builder {
    pub trace: Trace,
    pub genesis: Vec<(Address, Value)>,
    nodes: Vec<(NodeId, Correctness)>,
    t: u64,
}

impl Builder {
    pub fn new(nodes: usize, genesis: &[(u32, Value)]) -> Self {
        let mut trace = Trace::default();
        trace.push(
            0,
            Event::Meta {
                protocol: "hand".into(),
                seed: 0,
                replicas: nodes,
            },
        );
        let genesis: Vec<_> = genesis.iter().map(|(a, v)| (Address(*a), *v)).collect();
        for (address, value) in &genesis {
            trace.push(
                0,
                Event::Genesis {
                    address: *address,
                    value: *value,
                },
            );
        }
        Builder {
            trace,
            genesis,
            nodes: (0..nodes)
                .map(|i| (NodeId(i as u32), Correctness::Correct))
                .collect(),
            t: 1,
        }
    }

    /// Index of the most recently pushed record.
    pub fn last(&self) -> usize {
        self.trace.records.len() - 1
    }

    fn tick(&mut self) -> u64 {
        self.t += 1;
        self.t
    }

    pub fn mark(&mut self, node: u32, c: Correctness) -> &mut Self {
        self.nodes[node as usize].1 = c;
        self
    }

    pub fn submit(&mut self, client: u32, seq: u64, call: ProgramCall) -> TxId {
        let tx = TxRequest::simple(ClientId(client), seq, call);
        let id = tx.id;
        let t = self.tick();
        self.trace.push(
            t,
            Event::Submit {
                tx,
                entry: NodeId(0),
            },
        );
        id
    }

    pub fn commit(&mut self, node: u32, tx: TxId, outcome: TxOutcome, h: u64, i: u32) -> &mut Self {
        let t = self.tick();
        self.trace.push(
            t,
            Event::Commit {
                node: NodeId(node),
                tx,
                outcome,
                position: Version::new(h, i),
            },
        );
        self
    }

    pub fn revert(&mut self, node: u32, tx: TxId) -> &mut Self {
        let t = self.tick();
        self.trace.push(
            t,
            Event::Revert {
                node: NodeId(node),
                tx,
            },
        );
        self
    }

    pub fn ack(&mut self, client: u32, tx: TxId, node: u32) -> &mut Self {
        let t = self.tick();
        self.trace.push(
            t,
            Event::Ack {
                client: ClientId(client),
                tx,
                node: NodeId(node),
                outcome: TxOutcome::Committed,
            },
        );
        self
    }

    pub fn read(&mut self, client: u32, node: u32, address: u32, value: Value) -> &mut Self {
        let t = self.tick();
        self.trace.push(
            t,
            Event::Read {
                client: ClientId(client),
                node: NodeId(node),
                address: Address(address),
                value,
            },
        );
        self
    }

    /// Close the trace with the given per-node digests.
    pub fn finish_with(&mut self, digests: &[Digest]) -> Trace {
        let t = self.tick();
        for (node, correctness) in self.nodes.clone() {
            self.trace.push(t, Event::NodeStatus { node, correctness });
        }
        for (i, d) in digests.iter().enumerate() {
            self.trace.push(
                t,
                Event::Final {
                    node: NodeId(i as u32),
                    digest: *d,
                },
            );
        }
        self.trace.clone()
    }

    /// Close the trace with every node at the digest of `calls` replayed.
    pub fn finish_replayed(&mut self, calls: &[&ProgramCall]) -> Trace {
        let d = replay(&VersionedStore::genesis(self.genesis.clone()), calls.iter().copied())
            .0
            .digest();
        let digests = vec![d; self.nodes.len()];
        self.finish_with(&digests)
    }
}

pub fn set(a: u32, v: Value) -> ProgramCall {
    ProgramCall::Set {
        address: Address(a),
        value: v,
    }
}

pub fn transfer(from: u32, to: u32, amount: Value) -> ProgramCall {
    ProgramCall::Transfer {
        from: Address(from),
        to: Address(to),
        amount,
    }
}
