//! Deterministic simulation of permissioned-blockchain replication
//! architectures, with trace checkers for durability, global atomicity,
//! one-copy serializability and session consistency.

pub mod ids;
pub mod ledger;
pub mod ratio;
pub mod sim;
pub mod trace;
pub mod checkers;
pub mod workload;
pub mod forkchain;
pub mod bft;
pub mod unl;
pub mod eov;
pub mod ece;
pub mod harness;
