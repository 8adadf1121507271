//! The replicated data model: deterministic programs, a versioned world
//! state, blocks, and the serial replay oracle.

mod block;
mod program;
mod replay;
mod store;
mod tx;

pub use block::{Block, Payload};
pub use program::{execute_program, ExecResult, ExecStatus, ProgramCall};
pub use replay::{apply_call, replay};
pub use store::{apply_journaled, Journal, StoreError, VersionedStore, EMPTY_STORE_DIGEST};
pub use tx::{TxOutcome, TxRequest};
