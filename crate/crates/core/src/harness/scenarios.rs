//! Scenario files shipped with the crate.

use super::ScenarioConfig;

pub const SHIPPED: &[(&str, &str)] = &[
    ("aura-partition", include_str!("../../scenarios/aura-partition.json")),
    ("chain-basic", include_str!("../../scenarios/chain-basic.json")),
    ("chain-hash-order", include_str!("../../scenarios/chain-hash-order.json")),
    ("clique-partition", include_str!("../../scenarios/clique-partition.json")),
    ("fabric-contention", include_str!("../../scenarios/fabric-contention.json")),
    ("fabric-lagging-peer", include_str!("../../scenarios/fabric-lagging-peer.json")),
    ("multichain-partition", include_str!("../../scenarios/multichain-partition.json")),
    ("quorum-ibft-basic", include_str!("../../scenarios/quorum-ibft-basic.json")),
    ("quorum-ibft-equivocation", include_str!("../../scenarios/quorum-ibft-equivocation.json")),
    ("quorum-ibft-two-byzantine", include_str!("../../scenarios/quorum-ibft-two-byzantine.json")),
    ("quorum-raft-crash", include_str!("../../scenarios/quorum-raft-crash.json")),
    ("ripple-high-overlap", include_str!("../../scenarios/ripple-high-overlap.json")),
    ("ripple-low-overlap", include_str!("../../scenarios/ripple-low-overlap.json")),
    ("sawtooth-deps", include_str!("../../scenarios/sawtooth-deps.json")),
    ("sawtooth-poet-partition", include_str!("../../scenarios/sawtooth-poet-partition.json")),
    ("sawtooth-tampered-root", include_str!("../../scenarios/sawtooth-tampered-root.json")),
    ("tendermint-basic", include_str!("../../scenarios/tendermint-basic.json")),
    ("tendermint-session", include_str!("../../scenarios/tendermint-session.json")),
    ("zero-tx", include_str!("../../scenarios/zero-tx.json")),
];

/// A shipped scenario by name, parsed and validated.
pub fn shipped(name: &str) -> Option<ScenarioConfig> {
    SHIPPED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| ScenarioConfig::from_json(text).unwrap_or_else(|e| panic!("shipped scenario {name}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_shipped_scenario_validates() {
        for (name, _) in SHIPPED {
            assert!(shipped(name).is_some());
        }
    }
}
