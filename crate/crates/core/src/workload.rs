//! Client workload generation.
//!
//! Workloads are open-loop: submission times are fixed up front and do not
//! depend on acknowledgements. Each client numbers its requests from 1 in
//! submission order.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ids::{Address, ClientId, NodeId, TxId, Value};
use crate::ledger::{ProgramCall, TxRequest};
use crate::ratio::Ratio;
use crate::sim::{rng, SimTime, Submission};

/// Relative weights of the program library.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramMix {
    #[serde(default)]
    pub set: u32,
    #[serde(default)]
    pub transfer: u32,
    #[serde(default)]
    pub read: u32,
    #[serde(default)]
    pub noop: u32,
}

impl Default for ProgramMix {
    fn default() -> Self {
        Self {
            set: 1,
            transfer: 3,
            read: 0,
            noop: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DependencyPolicy {
    #[default]
    None,
    /// Each request depends on the same client's previous request.
    Previous,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EntryPolicy {
    /// A uniformly random node per request.
    #[default]
    Random,
    /// Client `c` always submits to node `c mod n`.
    Home,
    /// Uniform over the listed nodes.
    Nodes(Vec<NodeId>),
}

/// A hand-written request, used by signature scenarios.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedTx {
    pub time: SimTime,
    pub client: ClientId,
    pub call: ProgramCall,
    pub entry: NodeId,
    /// Depend on the client's previous scripted request.
    #[serde(default)]
    pub after_previous: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    #[serde(default = "default_clients")]
    pub clients: u32,
    #[serde(default)]
    pub txs: usize,
    #[serde(default = "default_accounts")]
    pub accounts: u32,
    #[serde(default = "default_balance")]
    pub initial_balance: Value,
    #[serde(default)]
    pub mix: ProgramMix,
    /// Probability that an address is drawn from the two hot accounts
    /// instead of uniformly.
    #[serde(default = "zero")]
    pub conflict_rate: Ratio,
    #[serde(default = "default_max_amount")]
    pub max_amount: Value,
    #[serde(default = "default_start")]
    pub start: SimTime,
    /// Ticks between consecutive submissions (a random offset within the
    /// gap is added).
    #[serde(default = "default_interval")]
    pub interval: SimTime,
    /// Consecutive requests of one client submitted together; engines that
    /// batch (execute-consensus-execute) treat them as one atomic batch.
    #[serde(default = "one")]
    pub batch_size: usize,
    #[serde(default)]
    pub entry: EntryPolicy,
    /// Never pick a byzantine node as the entry point.
    #[serde(default)]
    pub avoid_byzantine_entry: bool,
    #[serde(default)]
    pub deps: DependencyPolicy,
    #[serde(default)]
    pub scripted: Vec<ScriptedTx>,
}

fn default_clients() -> u32 {
    4
}
fn default_accounts() -> u32 {
    8
}
fn default_balance() -> Value {
    100
}
fn zero() -> Ratio {
    Ratio::ZERO
}
fn default_max_amount() -> Value {
    40
}
fn default_start() -> SimTime {
    5
}
fn default_interval() -> SimTime {
    4
}
fn one() -> usize {
    1
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all workload fields have defaults")
    }
}

impl WorkloadConfig {
    pub fn genesis(&self) -> Vec<(Address, Value)> {
        (0..self.accounts)
            .map(|a| (Address(a), self.initial_balance))
            .collect()
    }

    pub fn validate(&self, nodes: usize) -> Result<(), String> {
        if self.txs > 0 && self.clients == 0 {
            return Err("workload has transactions but no clients".into());
        }
        if self.accounts < 2 {
            return Err("workload needs at least two accounts".into());
        }
        if !self.conflict_rate.is_unit_interval() {
            return Err("conflict_rate must be within [0, 1]".into());
        }
        let m = &self.mix;
        if self.txs > 0 && m.set + m.transfer + m.read + m.noop == 0 {
            return Err("program mix has no positive weight".into());
        }
        if self.batch_size == 0 {
            return Err("batch_size must be at least 1".into());
        }
        if self.max_amount < 1 {
            return Err("max_amount must be positive".into());
        }
        let check_node = |n: NodeId| {
            if n.index() < nodes {
                Ok(())
            } else {
                Err(format!("workload names unknown node {n}"))
            }
        };
        if let EntryPolicy::Nodes(list) = &self.entry {
            if list.is_empty() {
                return Err("entry node list is empty".into());
            }
            list.iter().try_for_each(|n| check_node(*n))?;
        }
        self.scripted.iter().try_for_each(|s| check_node(s.entry))?;
        Ok(())
    }

    /// Materialise the submissions for one run. `entries` lists the nodes
    /// clients may submit to (replicas, or client actors for engines that
    /// model clients explicitly).
    pub fn generate(
        &self,
        seed: u64,
        entries: &[NodeId],
        byzantine: &BTreeSet<NodeId>,
    ) -> Vec<Submission> {
        let mut rng = rng::stream(seed, "workload", 0);
        let mut next_seq: BTreeMap<ClientId, u64> = BTreeMap::new();
        let mut previous: BTreeMap<ClientId, TxId> = BTreeMap::new();
        let mut out = Vec::new();

        let eligible: Vec<NodeId> = match &self.entry {
            EntryPolicy::Nodes(list) => list.clone(),
            _ => entries.to_vec(),
        };
        let eligible: Vec<NodeId> = if self.avoid_byzantine_entry {
            let honest: Vec<NodeId> = eligible
                .iter()
                .copied()
                .filter(|n| !byzantine.contains(n))
                .collect();
            if honest.is_empty() {
                eligible
            } else {
                honest
            }
        } else {
            eligible
        };

        let mut make = |client: ClientId, call: ProgramCall, after_previous: bool| {
            let seq = next_seq.entry(client).or_insert(1);
            let deps: BTreeSet<TxId> = if after_previous {
                previous.get(&client).copied().into_iter().collect()
            } else {
                BTreeSet::new()
            };
            let reads = call.natural_reads();
            let writes = call.natural_writes();
            let tx = TxRequest::new(client, *seq, call, reads, writes, deps);
            *seq += 1;
            previous.insert(client, tx.id);
            tx
        };

        let mut scripted = self.scripted.clone();
        scripted.sort_by_key(|s| s.time);
        for s in scripted {
            let tx = make(s.client, s.call.clone(), s.after_previous);
            out.push(Submission {
                time: s.time,
                tx,
                entry: s.entry,
            });
        }

        let mut produced = 0;
        let mut slot = 0u64;
        while produced < self.txs && self.clients > 0 {
            let client = ClientId(rng.random_range(0..self.clients));
            let time = self.start + slot * self.interval + rng.random_range(0..self.interval.max(1));
            slot += 1;
            let entry = match &self.entry {
                EntryPolicy::Home => {
                    let home = entries[client.0 as usize % entries.len()];
                    if self.avoid_byzantine_entry && byzantine.contains(&home) {
                        eligible[client.0 as usize % eligible.len()]
                    } else {
                        home
                    }
                }
                _ => eligible[rng.random_range(0..eligible.len())],
            };
            let count = self.batch_size.min(self.txs - produced);
            for _ in 0..count {
                let call = self.draw_call(&mut rng);
                let tx = make(client, call, self.deps == DependencyPolicy::Previous);
                out.push(Submission { time, tx, entry });
            }
            produced += count;
        }
        out.sort_by_key(|s| s.time);
        out
    }

    fn draw_address(&self, rng: &mut impl Rng) -> Address {
        let hot = self.conflict_rate.num() > 0
            && self
                .conflict_rate
                .accepts(rng.random_range(0..self.conflict_rate.den()));
        if hot {
            Address(rng.random_range(0..2))
        } else {
            Address(rng.random_range(0..self.accounts))
        }
    }

    fn draw_call(&self, rng: &mut impl Rng) -> ProgramCall {
        let m = &self.mix;
        let total = m.set + m.transfer + m.read + m.noop;
        let mut pick = rng.random_range(0..total);
        if pick < m.set {
            return ProgramCall::Set {
                address: self.draw_address(rng),
                value: rng.random_range(0..200),
            };
        }
        pick -= m.set;
        if pick < m.transfer {
            let from = self.draw_address(rng);
            let mut to = self.draw_address(rng);
            if to == from {
                to = Address((from.0 + 1) % self.accounts);
            }
            return ProgramCall::Transfer {
                from,
                to,
                amount: rng.random_range(1..=self.max_amount),
            };
        }
        pick -= m.transfer;
        if pick < m.read {
            return ProgramCall::Read {
                address: self.draw_address(rng),
            };
        }
        ProgramCall::Noop
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nodes(n: u32) -> Vec<NodeId> {
        (0..n).map(NodeId).collect()
    }

    #[test]
    fn client_sequences_follow_submission_order() {
        let w = WorkloadConfig {
            txs: 40,
            ..WorkloadConfig::default()
        };
        let subs = w.generate(3, &nodes(4), &BTreeSet::new());
        assert_eq!(subs.len(), 40);
        let mut last: BTreeMap<ClientId, (SimTime, u64)> = BTreeMap::new();
        for s in &subs {
            if let Some((t, q)) = last.get(&s.tx.client) {
                assert!(s.tx.seq == q + 1 && s.time >= *t);
            } else {
                assert_eq!(s.tx.seq, 1);
            }
            last.insert(s.tx.client, (s.time, s.tx.seq));
        }
    }

    #[test]
    fn previous_dependency_links_each_client_chain() {
        let w = WorkloadConfig {
            txs: 20,
            deps: DependencyPolicy::Previous,
            ..WorkloadConfig::default()
        };
        let subs = w.generate(1, &nodes(4), &BTreeSet::new());
        let mut prev: BTreeMap<ClientId, TxId> = BTreeMap::new();
        for s in &subs {
            let expected: BTreeSet<TxId> = prev.get(&s.tx.client).copied().into_iter().collect();
            assert_eq!(s.tx.deps, expected);
            prev.insert(s.tx.client, s.tx.id);
        }
    }

    #[test]
    fn byzantine_entries_can_be_avoided() {
        let w = WorkloadConfig {
            txs: 50,
            avoid_byzantine_entry: true,
            ..WorkloadConfig::default()
        };
        let byz: BTreeSet<NodeId> = [NodeId(2)].into();
        assert!(w
            .generate(9, &nodes(4), &byz)
            .iter()
            .all(|s| s.entry != NodeId(2)));
    }

    #[test]
    fn batches_share_client_time_and_entry() {
        let w = WorkloadConfig {
            txs: 9,
            batch_size: 3,
            ..WorkloadConfig::default()
        };
        let subs = w.generate(2, &nodes(4), &BTreeSet::new());
        for chunk in subs.chunks(3) {
            assert!(chunk
                .iter()
                .all(|s| s.tx.client == chunk[0].tx.client && s.time == chunk[0].time && s.entry == chunk[0].entry));
        }
    }
}
