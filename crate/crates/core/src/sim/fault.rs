use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ids::{ClientId, NodeId};

use super::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    /// Send conflicting proposals or votes to different peers.
    Equivocate,
    /// Leave targeted clients' transactions out of proposals.
    Censor,
    /// Send nothing at all.
    Silent,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ByzantineSpec {
    pub node: NodeId,
    pub behaviors: BTreeSet<Behavior>,
    /// Clients a censoring node targets; empty means every client.
    #[serde(default)]
    pub censor_clients: BTreeSet<ClientId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrashSpec {
    pub node: NodeId,
    pub at: SimTime,
    #[serde(default)]
    pub recover: Option<SimTime>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FaultPlan {
    pub crashes: Vec<CrashSpec>,
    pub byzantine: BTreeMap<NodeId, ByzantineSpec>,
}

impl FaultPlan {
    pub fn new(crashes: Vec<CrashSpec>, byzantine: Vec<ByzantineSpec>) -> Result<Self, String> {
        let byzantine: BTreeMap<_, _> = byzantine.into_iter().map(|b| (b.node, b)).collect();
        for c in &crashes {
            if byzantine.contains_key(&c.node) {
                return Err(format!("{} is both byzantine and scheduled to crash", c.node));
            }
            if c.recover.is_some_and(|r| r <= c.at) {
                return Err(format!("{} recovers before it crashes", c.node));
            }
        }
        Ok(Self { crashes, byzantine })
    }

    pub fn is_byzantine(&self, node: NodeId) -> bool {
        self.byzantine.contains_key(&node)
    }

    pub fn has(&self, node: NodeId, behavior: Behavior) -> bool {
        self.byzantine
            .get(&node)
            .is_some_and(|b| b.behaviors.contains(&behavior))
    }

    /// Whether `node` censors transactions of `client`.
    pub fn censors(&self, node: NodeId, client: ClientId) -> bool {
        self.byzantine.get(&node).is_some_and(|b| {
            b.behaviors.contains(&Behavior::Censor)
                && (b.censor_clients.is_empty() || b.censor_clients.contains(&client))
        })
    }

    pub fn byzantine_nodes(&self) -> BTreeSet<NodeId> {
        self.byzantine.keys().copied().collect()
    }

    /// Crashed at `end` with no recovery before it.
    pub fn crashed_at_end(&self, node: NodeId, end: SimTime) -> bool {
        self.crashes
            .iter()
            .filter(|c| c.node == node && c.at <= end)
            .any(|c| c.recover.is_none_or(|r| r > end))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byzantine_and_crashed_sets_are_disjoint() {
        let err = FaultPlan::new(
            vec![CrashSpec {
                node: NodeId(1),
                at: 5,
                recover: None,
            }],
            vec![ByzantineSpec {
                node: NodeId(1),
                behaviors: [Behavior::Silent].into(),
                censor_clients: BTreeSet::new(),
            }],
        );
        assert!(err.is_err());
    }

    #[test]
    fn censor_targets_default_to_everyone() {
        let plan = FaultPlan::new(
            vec![],
            vec![ByzantineSpec {
                node: NodeId(0),
                behaviors: [Behavior::Censor].into(),
                censor_clients: BTreeSet::new(),
            }],
        )
        .unwrap();
        assert!(plan.censors(NodeId(0), ClientId(4)));
        assert!(!plan.censors(NodeId(1), ClientId(4)));
    }
}
