//! Finality-providing engines: a rotating-leader round-based BFT protocol
//! (used for IBFT-style, Tendermint-style and crash-tolerant ordering) and
//! a single generator collecting an M-of-N signer quorum.

pub mod explore;
pub mod generator;
pub mod node;
pub mod replica;
pub mod rules;

pub use generator::{ChainMsg, ChainNode, ChainTimer, GeneratorParams};
pub use node::{BftNode, LedgerApp, Ordering, QueueApp};
pub use replica::{adversary_side, BftApp, BftMsg, BftParams, BftReplica, BftTimer};
pub use rules::{leader_for, Action, Quorum, Round, RoundState, Step, Vote};
