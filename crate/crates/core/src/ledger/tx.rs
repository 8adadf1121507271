use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::program::ProgramCall;
use crate::ids::{Address, ClientId, StableHasher, TxId};

/// A client request. The id is a hash of every other field, so two requests
/// with equal content share an id.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TxRequest {
    pub id: TxId,
    pub client: ClientId,
    /// Per-client counter, starting at 1.
    pub seq: u64,
    pub call: ProgramCall,
    pub declared_reads: BTreeSet<Address>,
    pub declared_writes: BTreeSet<Address>,
    pub deps: BTreeSet<TxId>,
}

impl TxRequest {
    pub fn new(
        client: ClientId,
        seq: u64,
        call: ProgramCall,
        declared_reads: BTreeSet<Address>,
        declared_writes: BTreeSet<Address>,
        deps: BTreeSet<TxId>,
    ) -> Self {
        let id = Self::compute_id(client, seq, &call, &declared_reads, &declared_writes, &deps);
        Self {
            id,
            client,
            seq,
            call,
            declared_reads,
            declared_writes,
            deps,
        }
    }

    /// Request whose declared sets are exactly the program's natural accesses.
    pub fn simple(client: ClientId, seq: u64, call: ProgramCall) -> Self {
        let reads = call.natural_reads();
        let writes = call.natural_writes();
        Self::new(client, seq, call, reads, writes, BTreeSet::new())
    }

    pub fn compute_id(
        client: ClientId,
        seq: u64,
        call: &ProgramCall,
        declared_reads: &BTreeSet<Address>,
        declared_writes: &BTreeSet<Address>,
        deps: &BTreeSet<TxId>,
    ) -> TxId {
        let mut h = StableHasher::new();
        h.u8(0x54).u32(client.0).u64(seq);
        call.hash_into(&mut h);
        h.u64(declared_reads.len() as u64);
        for a in declared_reads {
            h.u32(a.0);
        }
        h.u64(declared_writes.len() as u64);
        for a in declared_writes {
            h.u32(a.0);
        }
        h.u64(deps.len() as u64);
        for d in deps {
            h.u64(d.0);
        }
        TxId(h.finish())
    }

    pub fn id_is_consistent(&self) -> bool {
        self.id
            == Self::compute_id(
                self.client,
                self.seq,
                &self.call,
                &self.declared_reads,
                &self.declared_writes,
                &self.deps,
            )
    }
}

/// Final per-node outcome of a transaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TxOutcome {
    /// Executed and its writes applied.
    Committed,
    /// Executed, program guard failed, no writes.
    Aborted,
    /// Ordered but invalidated by a stale readset.
    MvccConflict,
    /// Ordered but the endorsement policy was not met.
    PolicyFailure,
    /// Ordered but failed scheduling or declared-set validation.
    Failed,
}

impl TxOutcome {
    /// Outcomes whose transaction takes part in the serial history (its
    /// program ran against the committed state).
    pub fn in_serial_history(self) -> bool {
        matches!(self, TxOutcome::Committed | TxOutcome::Aborted)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TxOutcome::Committed => "committed",
            TxOutcome::Aborted => "aborted",
            TxOutcome::MvccConflict => "mvcc-conflict",
            TxOutcome::PolicyFailure => "policy-failure",
            TxOutcome::Failed => "failed",
        }
    }
}

impl fmt::Display for TxOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TxOutcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "committed" => TxOutcome::Committed,
            "aborted" => TxOutcome::Aborted,
            "mvcc-conflict" => TxOutcome::MvccConflict,
            "policy-failure" => TxOutcome::PolicyFailure,
            "failed" => TxOutcome::Failed,
            _ => return Err(format!("unknown outcome {s:?}")),
        })
    }
}

impl From<super::program::ExecStatus> for TxOutcome {
    fn from(s: super::program::ExecStatus) -> Self {
        match s {
            super::program::ExecStatus::Committed => TxOutcome::Committed,
            super::program::ExecStatus::Aborted => TxOutcome::Aborted,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_binds_every_field() {
        let base = TxRequest::simple(ClientId(1), 1, ProgramCall::Noop);
        assert!(base.id_is_consistent());
        let other_seq = TxRequest::simple(ClientId(1), 2, ProgramCall::Noop);
        let other_client = TxRequest::simple(ClientId(2), 1, ProgramCall::Noop);
        let mut deps = BTreeSet::new();
        deps.insert(base.id);
        let with_dep = TxRequest::new(
            ClientId(1),
            1,
            ProgramCall::Noop,
            BTreeSet::new(),
            BTreeSet::new(),
            deps,
        );
        let ids: BTreeSet<_> = [base.id, other_seq.id, other_client.id, with_dep.id].into();
        assert_eq!(ids.len(), 4);
    }

    #[test]
    fn outcome_text_round_trips() {
        for o in [
            TxOutcome::Committed,
            TxOutcome::Aborted,
            TxOutcome::MvccConflict,
            TxOutcome::PolicyFailure,
            TxOutcome::Failed,
        ] {
            assert_eq!(o.to_string().parse::<TxOutcome>().unwrap(), o);
        }
    }
}
