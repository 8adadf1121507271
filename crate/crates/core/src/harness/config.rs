//! Scenario files: JSON, every section optional, unknown keys rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::checkers::Criterion;
use crate::eov::Policy;
use crate::ids::{ClientId, NodeId};
use crate::ratio::Ratio;
use crate::sim::{ByzantineSpec, CrashSpec, FaultPlan, NetworkModel, ReadPolicy, SimTime};
use crate::workload::WorkloadConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    AuraClique,
    Multichain,
    QuorumIbft,
    QuorumRaft,
    RippleUnl,
    Chain,
    Fabric,
    SawtoothBft,
    SawtoothPoet,
    TendermintBigchaindb,
}

impl Protocol {
    pub const ALL: [Protocol; 10] = [
        Protocol::AuraClique,
        Protocol::Multichain,
        Protocol::QuorumIbft,
        Protocol::QuorumRaft,
        Protocol::RippleUnl,
        Protocol::Chain,
        Protocol::Fabric,
        Protocol::SawtoothBft,
        Protocol::SawtoothPoet,
        Protocol::TendermintBigchaindb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::AuraClique => "aura-clique",
            Protocol::Multichain => "multichain",
            Protocol::QuorumIbft => "quorum-ibft",
            Protocol::QuorumRaft => "quorum-raft",
            Protocol::RippleUnl => "ripple-unl",
            Protocol::Chain => "chain",
            Protocol::Fabric => "fabric",
            Protocol::SawtoothBft => "sawtooth-bft",
            Protocol::SawtoothPoet => "sawtooth-poet",
            Protocol::TendermintBigchaindb => "tendermint-bigchaindb",
        }
    }

    fn section(self) -> &'static str {
        match self {
            Protocol::AuraClique | Protocol::Multichain | Protocol::SawtoothPoet => "forkchain",
            Protocol::QuorumIbft | Protocol::QuorumRaft | Protocol::TendermintBigchaindb | Protocol::SawtoothBft => "bft",
            Protocol::RippleUnl => "unl",
            Protocol::Chain => "chain",
            Protocol::Fabric => "fabric",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown protocol {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoaMode {
    #[default]
    Aura,
    Clique,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForkSection {
    /// Proposer rule for `aura-clique`; ignored by the other fork engines.
    pub mode: PoaMode,
    pub slot: SimTime,
    /// Clique: latest a non-owner waits before proposing out of turn.
    pub wiggle: SimTime,
    /// Multichain: share of miners that must separate two blocks by the
    /// same miner.
    pub diversity: Ratio,
    /// Multichain: chance an eligible miner mines in a slot.
    pub mining: Ratio,
    pub status_interval: SimTime,
    pub max_block_txs: usize,
}

impl Default for ForkSection {
    fn default() -> Self {
        Self {
            mode: PoaMode::Aura,
            slot: 10,
            wiggle: 5,
            diversity: Ratio::new(1, 2).expect("nonzero"),
            mining: Ratio::new(3, 4).expect("nonzero"),
            status_interval: 20,
            max_block_txs: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BftSection {
    pub propose_timeout: SimTime,
    pub vote_timeout: SimTime,
    pub timeout_step: SimTime,
    pub status_interval: SimTime,
    pub max_block_txs: usize,
    pub adversary_salt: u64,
}

impl Default for BftSection {
    fn default() -> Self {
        Self {
            propose_timeout: 20,
            vote_timeout: 20,
            timeout_step: 10,
            status_interval: 25,
            max_block_txs: 50,
            adversary_salt: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnlSection {
    /// Per-node lists; nodes not listed trust every node.
    pub lists: BTreeMap<NodeId, BTreeSet<NodeId>>,
    pub interval: SimTime,
    pub iteration_gap: SimTime,
    pub thresholds: Vec<Ratio>,
    pub validation: Ratio,
    pub stamp_window: SimTime,
    pub max_ledger_txs: usize,
    pub adversary_salt: u64,
    pub adversary_group: Option<BTreeSet<NodeId>>,
}

impl Default for UnlSection {
    fn default() -> Self {
        let r = |n, d| Ratio::new(n, d).expect("nonzero");
        Self {
            lists: BTreeMap::new(),
            interval: 30,
            iteration_gap: 6,
            thresholds: vec![r(1, 2), r(13, 20), r(4, 5)],
            validation: r(4, 5),
            stamp_window: 8,
            max_ledger_txs: 100,
            adversary_salt: 0,
            adversary_group: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSection {
    pub generator: NodeId,
    /// Defaults to every node.
    pub signers: Option<Vec<NodeId>>,
    /// Defaults to `2F+1` for `N = 3F+1` signers.
    pub threshold: Option<usize>,
    pub interval: SimTime,
    pub status_interval: SimTime,
    pub max_block_txs: usize,
    pub adversary_salt: u64,
}

impl Default for ChainSection {
    fn default() -> Self {
        Self {
            generator: NodeId(0),
            signers: None,
            threshold: None,
            interval: 10,
            status_interval: 25,
            max_block_txs: 50,
            adversary_salt: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingBackend {
    #[default]
    Bft,
    Raft,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FabricSection {
    /// Peers per organisation; peer ids are assigned in order from 0.
    pub orgs: Vec<usize>,
    pub policy: Option<Policy>,
    pub orderers: usize,
    pub ordering: OrderingBackend,
    pub org_lag: Vec<SimTime>,
    pub endorse_timeout: SimTime,
    pub endorse_retries: u32,
    pub home: BTreeMap<ClientId, NodeId>,
    pub bft: BftSection,
}

impl Default for FabricSection {
    fn default() -> Self {
        Self {
            orgs: vec![2, 2],
            policy: None,
            orderers: 4,
            ordering: OrderingBackend::Bft,
            org_lag: Vec::new(),
            endorse_timeout: 40,
            endorse_retries: 2,
            home: BTreeMap::new(),
            bft: BftSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SawtoothSection {
    pub max_block_batches: usize,
}

impl Default for SawtoothSection {
    fn default() -> Self {
        Self { max_block_batches: 20 }
    }
}

fn default_until() -> SimTime {
    300
}
fn default_drain() -> SimTime {
    400
}
fn default_max_events() -> u64 {
    2_000_000
}
fn default_depth() -> u64 {
    1
}
fn default_checks() -> String {
    "all".into()
}

/// Everything that determines a run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub protocol: Protocol,
    /// Replica count. Fabric: must equal the total number of peers.
    pub nodes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_until")]
    pub until: SimTime,
    #[serde(default = "default_drain")]
    pub drain: SimTime,
    #[serde(default = "default_max_events")]
    pub max_events: u64,
    #[serde(default)]
    pub network: NetworkModel,
    #[serde(default)]
    pub crashes: Vec<CrashSpec>,
    #[serde(default)]
    pub byzantine: Vec<ByzantineSpec>,
    /// Permit more faults than the protocol tolerates, to demonstrate what
    /// breaks.
    #[serde(default)]
    pub allow_excess_faults: bool,
    #[serde(default)]
    pub workload: WorkloadConfig,
    #[serde(default)]
    pub reads: ReadPolicy,
    /// Fork engines acknowledge a transaction once its block is this deep.
    #[serde(default = "default_depth")]
    pub confirmation_depth: u64,
    /// `all` or a comma-separated list of checker names.
    #[serde(default = "default_checks")]
    pub checks: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forkchain: Option<ForkSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bft: Option<BftSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unl: Option<UnlSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<ChainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fabric: Option<FabricSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sawtooth: Option<SawtoothSection>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn criteria(&self) -> Result<Vec<Criterion>, HarnessError> {
        Criterion::parse_list(&self.checks).map_err(HarnessError::Config)
    }

    pub fn fault_plan(&self) -> Result<FaultPlan, HarnessError> {
        FaultPlan::new(self.crashes.clone(), self.byzantine.clone()).map_err(HarnessError::Config)
    }

    /// Total actor count: replicas plus auxiliary actors.
    pub fn actors(&self) -> usize {
        match self.protocol {
            Protocol::Fabric => {
                let f = self.fabric.clone().unwrap_or_default();
                self.nodes + f.orderers + self.workload.clients as usize
            }
            _ => self.nodes,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: String| Err(HarnessError::Config(m));
        if self.nodes == 0 {
            return err("nodes must be at least 1".into());
        }
        self.criteria()?;
        let plan = self.fault_plan()?;
        let sections = [
            ("forkchain", self.forkchain.is_some()),
            ("bft", self.bft.is_some()),
            ("unl", self.unl.is_some()),
            ("chain", self.chain.is_some()),
            ("fabric", self.fabric.is_some()),
            ("sawtooth", self.sawtooth.is_some()),
        ];
        for (name, present) in sections {
            let applies = name == self.protocol.section() || (name == "sawtooth" && self.protocol == Protocol::SawtoothBft);
            if present && !applies {
                return err(format!("section {name:?} does not apply to protocol {}", self.protocol));
            }
        }
        let actors = self.actors();
        let known = |n: NodeId| n.index() < actors;
        for n in plan.byzantine.keys().chain(plan.crashes.iter().map(|c| &c.node)) {
            if !known(*n) {
                return err(format!("fault plan names unknown node {n}"));
            }
        }
        for p in &self.network.partitions {
            if let Some(n) = p.side.iter().find(|n| !known(**n)) {
                return err(format!("partition names unknown node {n}"));
            }
        }
        if !self.network.drop.is_unit_interval() {
            return err("network drop must be within [0, 1]".into());
        }
        self.workload.validate(actors).map_err(HarnessError::Config)?;
        if let crate::sim::ReadRouting::Designated(m) = &self.reads.routing {
            if let Some(n) = m.values().find(|n| n.index() >= self.nodes) {
                return err(format!("reads are routed to {n}, which is not a replica"));
            }
        }
        if self.confirmation_depth == 0 {
            return err("confirmation_depth must be at least 1".into());
        }

        let byz = plan.byzantine.len();
        let crashed = plan.crashes.len();
        let excess = |limit: usize, what: &str| -> Result<(), HarnessError> {
            if self.allow_excess_faults {
                Ok(())
            } else {
                Err(HarnessError::Config(format!(
                    "{} tolerates {limit} {what}; set allow_excess_faults to run beyond it",
                    self.protocol
                )))
            }
        };
        match self.protocol {
            Protocol::QuorumIbft | Protocol::TendermintBigchaindb | Protocol::SawtoothBft => {
                let f = (self.nodes - 1) / 3;
                if byz + crashed > f {
                    excess(f, "faulty validators")?;
                }
            }
            Protocol::QuorumRaft => {
                if byz > 0 {
                    return err("quorum-raft is crash-only; byzantine nodes are not allowed".into());
                }
                let f = (self.nodes - 1) / 2;
                if crashed > f {
                    excess(f, "crashed nodes")?;
                }
            }
            Protocol::Chain => {
                let c = self.chain.clone().unwrap_or_default();
                if !known(c.generator) || c.generator.index() >= self.nodes {
                    return err(format!("generator {} is not a node", c.generator));
                }
                if plan.is_byzantine(c.generator) {
                    excess(0, "byzantine generators")?;
                }
                let signers = c.signers.clone().unwrap_or_else(|| (0..self.nodes as u32).map(NodeId).collect());
                if signers.is_empty() || signers.iter().any(|s| s.index() >= self.nodes) {
                    return err("signers must be non-empty and name nodes".into());
                }
                if c.threshold.is_some_and(|t| t == 0 || t > signers.len()) {
                    return err("threshold must be within 1..=signers".into());
                }
                let f = (signers.len() - 1) / 3;
                if signers.iter().filter(|s| plan.is_byzantine(**s)).count() > f {
                    excess(f, "byzantine signers")?;
                }
            }
            Protocol::RippleUnl => {
                let u = self.unl.clone().unwrap_or_default();
                if u.thresholds.is_empty() || u.thresholds.iter().any(|t| !t.is_unit_interval()) {
                    return err("unl thresholds must be a non-empty list within [0, 1]".into());
                }
                if !u.validation.is_unit_interval() {
                    return err("unl validation must be within [0, 1]".into());
                }
                for (n, list) in &u.lists {
                    if n.index() >= self.nodes || list.is_empty() || list.iter().any(|m| m.index() >= self.nodes) {
                        return err(format!("unl list of {n} must be non-empty and name nodes"));
                    }
                }
            }
            Protocol::Fabric => {
                let f = self.fabric.clone().unwrap_or_default();
                let peers: usize = f.orgs.iter().sum();
                if f.orgs.is_empty() || f.orgs.contains(&0) {
                    return err("fabric needs at least one organisation, each with a peer".into());
                }
                if peers != self.nodes {
                    return err(format!("fabric has {peers} peers but nodes is {}", self.nodes));
                }
                if f.orderers == 0 {
                    return err("fabric needs at least one orderer".into());
                }
                if f.org_lag.len() > f.orgs.len() {
                    return err("org_lag lists more organisations than exist".into());
                }
                if let Some(p) = &f.policy {
                    let orgs = fabric_orgs(&f.orgs);
                    p.validate(&orgs).map_err(HarnessError::Config)?;
                }
                if let Some(n) = f.home.values().find(|n| n.index() >= self.nodes) {
                    return err(format!("home {n} is not a peer"));
                }
                let orderers: BTreeSet<NodeId> = (self.nodes..self.nodes + f.orderers).map(|i| NodeId(i as u32)).collect();
                let byz_orderers = plan.byzantine.keys().filter(|n| orderers.contains(n)).count();
                let crashed_orderers = plan.crashes.iter().filter(|c| orderers.contains(&c.node)).count();
                match f.ordering {
                    OrderingBackend::Bft => {
                        let tol = (f.orderers - 1) / 3;
                        if byz_orderers + crashed_orderers > tol {
                            excess(tol, "faulty orderers")?;
                        }
                    }
                    OrderingBackend::Raft => {
                        if byz_orderers > 0 {
                            return err("raft ordering is crash-only; byzantine orderers are not allowed".into());
                        }
                        let tol = (f.orderers - 1) / 2;
                        if crashed_orderers > tol {
                            excess(tol, "crashed orderers")?;
                        }
                    }
                }
            }
            Protocol::AuraClique | Protocol::Multichain | Protocol::SawtoothPoet => {
                let fk = self.forkchain.clone().unwrap_or_default();
                if fk.slot == 0 {
                    return err("slot must be positive".into());
                }
                if !fk.diversity.is_unit_interval() || !fk.mining.is_unit_interval() {
                    return err("diversity and mining must be within [0, 1]".into());
                }
            }
        }
        Ok(())
    }
}

/// Peer ids per organisation, numbered from 0 in order.
pub fn fabric_orgs(sizes: &[usize]) -> Vec<Vec<NodeId>> {
    let mut next = 0u32;
    sizes
        .iter()
        .map(|s| {
            let org = (next..next + *s as u32).map(NodeId).collect();
            next += *s as u32;
            org
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let e = ScenarioConfig::from_json(r#"{"protocol":"chain","nodes":4,"colour":1}"#).unwrap_err();
        assert!(e.to_string().contains("colour"), "{e}");
        let e = ScenarioConfig::from_json(r#"{"protocol":"chain","nodes":4,"workload":{"tx":3}}"#).unwrap_err();
        assert!(e.to_string().contains("tx"), "{e}");
    }

    #[test]
    fn ibft_needs_three_f_plus_one() {
        let text = r#"{"protocol":"quorum-ibft","nodes":4,
            "byzantine":[{"node":0,"behaviors":["equivocate"]},{"node":1,"behaviors":["silent"]}]}"#;
        assert!(ScenarioConfig::from_json(text).is_err());
        let allowed = text.replacen("\"nodes\":4,", "\"nodes\":4,\"allow_excess_faults\":true,", 1);
        assert!(ScenarioConfig::from_json(&allowed).is_ok());
    }

    #[test]
    fn raft_rejects_byzantine_nodes() {
        let text = r#"{"protocol":"quorum-raft","nodes":3,"byzantine":[{"node":0,"behaviors":["silent"]}]}"#;
        assert!(ScenarioConfig::from_json(text).is_err());
    }

    #[test]
    fn sections_must_match_the_protocol() {
        let text = r#"{"protocol":"chain","nodes":4,"unl":{}}"#;
        assert!(ScenarioConfig::from_json(text).is_err());
    }

    #[test]
    fn json_round_trips() {
        let cfg = ScenarioConfig::from_json(r#"{"protocol":"fabric","nodes":4,"fabric":{"orgs":[2,2]}}"#).unwrap();
        assert_eq!(ScenarioConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
}
