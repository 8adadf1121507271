//! Design facts each engine declares about itself, and the column layout of
//! the comparison matrix.

use serde::Serialize;

use super::config::Protocol;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct EngineMeta {
    pub location: &'static str,
    pub execution: &'static str,
    pub synchronization: &'static str,
    pub concurrency: &'static str,
    pub architecture: &'static str,
}

pub const DESCRIPTIVE_ROWS: [&str; 5] = [
    "Tx Location",
    "Execution Strategy",
    "Synchronization Strategy",
    "Concurrency Control",
    "Architecture",
];

impl EngineMeta {
    pub fn rows(&self) -> [&'static str; 5] {
        [self.location, self.execution, self.synchronization, self.concurrency, self.architecture]
    }
}

const SERIAL_EAGER: EngineMeta = EngineMeta {
    location: "anywhere",
    execution: "symmetric",
    synchronization: "eager",
    concurrency: "serial execution",
    architecture: "kernel-based",
};

pub fn engine_meta(p: Protocol) -> EngineMeta {
    match p {
        Protocol::AuraClique | Protocol::Multichain => EngineMeta {
            synchronization: "lazy",
            ..SERIAL_EAGER
        },
        Protocol::Fabric => EngineMeta {
            location: "policy-driven",
            execution: "asymmetric",
            synchronization: "eager",
            concurrency: "MVCC",
            architecture: "middleware-based",
        },
        Protocol::SawtoothBft => EngineMeta {
            concurrency: "deterministic predecessor list",
            ..SERIAL_EAGER
        },
        // Same executor as the finality variant, but blocks can be orphaned.
        Protocol::SawtoothPoet => EngineMeta {
            synchronization: "lazy",
            concurrency: "deterministic predecessor list",
            ..SERIAL_EAGER
        },
        Protocol::QuorumIbft
        | Protocol::QuorumRaft
        | Protocol::RippleUnl
        | Protocol::Chain
        | Protocol::TendermintBigchaindb => SERIAL_EAGER,
    }
}

/// One suite configuration: a protocol plus the scenarios it runs.
#[derive(Clone, Copy, Debug)]
pub struct SuiteConfig {
    pub label: &'static str,
    pub protocol: Protocol,
    pub scenarios: &'static [&'static str],
}

#[derive(Clone, Copy, Debug)]
pub struct Column {
    pub name: &'static str,
    pub configs: &'static [SuiteConfig],
    /// Reference verdicts: local ACID, atomicity, isolation, session.
    pub expected: [bool; 4],
}

pub const COLUMNS: [Column; 6] = [
    Column {
        name: "Aura/Clique/Multichain",
        configs: &[
            SuiteConfig {
                label: "aura",
                protocol: Protocol::AuraClique,
                scenarios: &["aura-partition"],
            },
            SuiteConfig {
                label: "clique",
                protocol: Protocol::AuraClique,
                scenarios: &["clique-partition"],
            },
            SuiteConfig {
                label: "multichain",
                protocol: Protocol::Multichain,
                scenarios: &["multichain-partition"],
            },
        ],
        expected: [false, false, false, false],
    },
    Column {
        name: "Quorum/Ripple",
        configs: &[
            SuiteConfig {
                label: "quorum-ibft",
                protocol: Protocol::QuorumIbft,
                scenarios: &["quorum-ibft-basic", "quorum-ibft-equivocation"],
            },
            SuiteConfig {
                label: "quorum-raft",
                protocol: Protocol::QuorumRaft,
                scenarios: &["quorum-raft-crash"],
            },
            SuiteConfig {
                label: "ripple-unl",
                protocol: Protocol::RippleUnl,
                scenarios: &["ripple-high-overlap"],
            },
        ],
        expected: [true, true, true, true],
    },
    Column {
        name: "Chain",
        configs: &[SuiteConfig {
            label: "chain",
            protocol: Protocol::Chain,
            scenarios: &["chain-basic", "chain-hash-order"],
        }],
        expected: [true, true, true, false],
    },
    Column {
        name: "Fabric",
        configs: &[SuiteConfig {
            label: "fabric",
            protocol: Protocol::Fabric,
            scenarios: &["fabric-contention", "fabric-lagging-peer"],
        }],
        expected: [true, true, true, false],
    },
    Column {
        name: "Sawtooth",
        configs: &[SuiteConfig {
            label: "sawtooth-bft",
            protocol: Protocol::SawtoothBft,
            scenarios: &["sawtooth-deps", "sawtooth-tampered-root"],
        }],
        expected: [true, true, true, true],
    },
    Column {
        name: "Tendermint/BigchainDB",
        configs: &[SuiteConfig {
            label: "tendermint-bigchaindb",
            protocol: Protocol::TendermintBigchaindb,
            scenarios: &["tendermint-basic", "tendermint-session"],
        }],
        expected: [true, true, true, false],
    },
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_fabric_is_asymmetric() {
        for p in Protocol::ALL {
            let m = engine_meta(p);
            assert_eq!(m.execution == "asymmetric", p == Protocol::Fabric, "{p}");
        }
    }

    #[test]
    fn columns_share_metadata() {
        for c in COLUMNS {
            let first = engine_meta(c.configs[0].protocol);
            assert!(c.configs.iter().all(|s| engine_meta(s.protocol) == first), "{}", c.name);
        }
    }
}
