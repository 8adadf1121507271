//! Actor construction for each protocol.

use std::collections::BTreeSet;
use std::sync::Arc;

use super::config::{fabric_orgs, BftSection, OrderingBackend, PoaMode, Protocol, ScenarioConfig};
use super::HarnessError;
use crate::bft::{BftNode, BftParams, ChainNode, GeneratorParams, LedgerApp, Ordering, Quorum};
use crate::ece::SawtoothNode;
use crate::eov::{FabricNode, FabricParams, Policy};
use crate::forkchain::{ForkNode, ForkParams, ProposerMode};
use crate::ids::NodeId;
use crate::ledger::VersionedStore;
use crate::sim::{self, Actor, FaultPlan, SimConfig};
use crate::trace::Trace;
use crate::unl::{UnlNode, UnlParams};
use crate::workload::{EntryPolicy, WorkloadConfig};

fn bft_params(s: &BftSection, validators: Vec<NodeId>, quorum: Quorum) -> Arc<BftParams> {
    Arc::new(BftParams {
        validators,
        quorum,
        propose_timeout: s.propose_timeout,
        vote_timeout: s.vote_timeout,
        timeout_step: s.timeout_step,
        status_interval: s.status_interval,
        adversary_salt: s.adversary_salt,
    })
}

fn ids(range: std::ops::Range<usize>) -> Vec<NodeId> {
    range.map(|i| NodeId(i as u32)).collect()
}

fn go<A: Actor>(
    actors: Vec<A>,
    cfg: &ScenarioConfig,
    plan: FaultPlan,
    workload: &WorkloadConfig,
    entries: &[NodeId],
) -> Result<Trace, HarnessError> {
    let submissions = workload.generate(cfg.seed, entries, &plan.byzantine_nodes());
    let sim_cfg = SimConfig {
        protocol: cfg.protocol.name().to_string(),
        seed: cfg.seed,
        until: cfg.until,
        drain: cfg.drain,
        network: cfg.network.clone(),
        faults: plan,
        reads: cfg.reads.clone(),
        genesis: workload.genesis(),
        max_events: cfg.max_events,
    };
    Ok(sim::run(actors, submissions, &sim_cfg)?)
}

/// Run the scenario at its configured seed.
pub fn simulate(cfg: &ScenarioConfig) -> Result<Trace, HarnessError> {
    cfg.validate()?;
    let plan = cfg.fault_plan()?;
    let faults = Arc::new(plan.clone());
    let n = cfg.nodes;
    let nodes = ids(0..n);
    let genesis = VersionedStore::genesis(cfg.workload.genesis());
    let store = || genesis.clone();
    match cfg.protocol {
        Protocol::AuraClique | Protocol::Multichain | Protocol::SawtoothPoet => {
            let s = cfg.forkchain.clone().unwrap_or_default();
            let mode = match cfg.protocol {
                Protocol::AuraClique => match s.mode {
                    PoaMode::Aura => ProposerMode::Aura,
                    PoaMode::Clique => ProposerMode::Clique { wiggle: s.wiggle },
                },
                Protocol::Multichain => ProposerMode::Diversity {
                    diversity: s.diversity,
                    mining: s.mining,
                },
                _ => ProposerMode::Lottery,
            };
            let params = Arc::new(ForkParams {
                mode,
                authorities: nodes.clone(),
                slot: s.slot,
                confirmation_depth: cfg.confirmation_depth,
                status_interval: s.status_interval,
                max_block_txs: s.max_block_txs,
                state_roots: cfg.protocol == Protocol::SawtoothPoet,
            });
            let actors = nodes
                .iter()
                .map(|me| ForkNode::new(*me, params.clone(), faults.clone(), store()))
                .collect();
            go(actors, cfg, plan, &cfg.workload, &nodes)
        }
        Protocol::QuorumIbft | Protocol::QuorumRaft | Protocol::TendermintBigchaindb => {
            let s = cfg.bft.clone().unwrap_or_default();
            let (quorum, ordering) = match cfg.protocol {
                Protocol::QuorumIbft => (Quorum::byzantine(n), Ordering::ClientCounter),
                Protocol::QuorumRaft => (Quorum::crash(n), Ordering::ClientCounter),
                _ => (Quorum::byzantine(n), Ordering::Arrival),
            };
            let params = bft_params(&s, nodes.clone(), quorum);
            let actors = nodes
                .iter()
                .map(|me| {
                    let app = LedgerApp::new(ordering, s.max_block_txs);
                    BftNode::new(*me, params.clone(), faults.clone(), app, store())
                })
                .collect();
            go(actors, cfg, plan, &cfg.workload, &nodes)
        }
        Protocol::SawtoothBft => {
            let s = cfg.bft.clone().unwrap_or_default();
            let st = cfg.sawtooth.clone().unwrap_or_default();
            let params = bft_params(&s, nodes.clone(), Quorum::byzantine(n));
            let actors = nodes
                .iter()
                .map(|me| {
                    SawtoothNode::new(
                        *me,
                        params.clone(),
                        faults.clone(),
                        store(),
                        cfg.workload.batch_size,
                        st.max_block_batches,
                    )
                })
                .collect();
            go(actors, cfg, plan, &cfg.workload, &nodes)
        }
        Protocol::Chain => {
            let s = cfg.chain.clone().unwrap_or_default();
            let signers = s.signers.clone().unwrap_or_else(|| nodes.clone());
            let f = (signers.len() - 1) / 3;
            let params = Arc::new(GeneratorParams {
                generator: s.generator,
                threshold: s.threshold.unwrap_or(2 * f + 1),
                signers,
                interval: s.interval,
                max_block_txs: s.max_block_txs,
                status_interval: s.status_interval,
                adversary_salt: s.adversary_salt,
            });
            let actors = nodes
                .iter()
                .map(|me| ChainNode::new(*me, params.clone(), faults.clone(), store()))
                .collect();
            go(actors, cfg, plan, &cfg.workload, &nodes)
        }
        Protocol::RippleUnl => {
            let s = cfg.unl.clone().unwrap_or_default();
            let all: BTreeSet<NodeId> = nodes.iter().copied().collect();
            let unl = nodes
                .iter()
                .map(|me| (*me, s.lists.get(me).cloned().unwrap_or_else(|| all.clone())))
                .collect();
            let params = Arc::new(UnlParams {
                unl,
                interval: s.interval,
                iteration_gap: s.iteration_gap,
                thresholds: s.thresholds,
                validation: s.validation,
                stamp_window: s.stamp_window,
                max_ledger_txs: s.max_ledger_txs,
                adversary_salt: s.adversary_salt,
                adversary_group: s.adversary_group,
            });
            let actors = nodes
                .iter()
                .map(|me| UnlNode::new(*me, params.clone(), faults.clone(), store()))
                .collect();
            go(actors, cfg, plan, &cfg.workload, &nodes)
        }
        Protocol::Fabric => {
            let s = cfg.fabric.clone().unwrap_or_default();
            let orgs = fabric_orgs(&s.orgs);
            let orderers = ids(n..n + s.orderers);
            let clients = ids(n + s.orderers..cfg.actors());
            let quorum = match s.ordering {
                OrderingBackend::Bft => Quorum::byzantine(s.orderers),
                OrderingBackend::Raft => Quorum::crash(s.orderers),
            };
            let policy = s
                .policy
                .clone()
                .unwrap_or_else(|| Policy::And((0..orgs.len()).map(Policy::Org).collect()));
            let mut org_lag = s.org_lag.clone();
            org_lag.resize(orgs.len(), 0);
            let params = Arc::new(FabricParams {
                orgs,
                policy,
                orderers: orderers.clone(),
                ordering: bft_params(&s.bft, orderers.clone(), quorum),
                org_lag,
                endorse_timeout: s.endorse_timeout,
                endorse_retries: s.endorse_retries,
                home: s.home.clone(),
                max_block_txs: s.bft.max_block_txs,
            });
            let mut actors: Vec<FabricNode> = nodes
                .iter()
                .map(|me| FabricNode::peer(*me, params.clone(), faults.clone(), store()))
                .collect();
            actors.extend(orderers.iter().map(|me| FabricNode::orderer(*me, params.clone(), faults.clone())));
            actors.extend(clients.iter().map(|_| FabricNode::client(params.clone())));
            // Each client submits through its own client actor.
            let mut workload = cfg.workload.clone();
            workload.entry = EntryPolicy::Home;
            workload.avoid_byzantine_entry = false;
            go(actors, cfg, plan, &workload, &clients)
        }
    }
}
