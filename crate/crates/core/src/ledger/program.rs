use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::store::VersionedStore;
use crate::ids::{Address, Value, Version};

/// The fixed library of deterministic transaction programs.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProgramCall {
    /// Blind write.
    Set { address: Address, value: Value },
    /// Move `amount` between accounts; aborts when the source balance is short.
    Transfer {
        from: Address,
        to: Address,
        amount: Value,
    },
    Read { address: Address },
    Noop,
}

impl ProgramCall {
    /// Addresses the program reads when executed.
    pub fn natural_reads(&self) -> BTreeSet<Address> {
        match self {
            ProgramCall::Set { .. } | ProgramCall::Noop => BTreeSet::new(),
            ProgramCall::Transfer { from, to, .. } => [*from, *to].into(),
            ProgramCall::Read { address } => [*address].into(),
        }
    }

    /// Addresses the program may write.
    pub fn natural_writes(&self) -> BTreeSet<Address> {
        match self {
            ProgramCall::Set { address, .. } => [*address].into(),
            ProgramCall::Transfer { from, to, .. } => [*from, *to].into(),
            ProgramCall::Read { .. } | ProgramCall::Noop => BTreeSet::new(),
        }
    }

    pub(crate) fn hash_into(&self, h: &mut crate::ids::StableHasher) {
        match self {
            ProgramCall::Set { address, value } => {
                h.u8(1).u32(address.0).i64(*value);
            }
            ProgramCall::Transfer { from, to, amount } => {
                h.u8(2).u32(from.0).u32(to.0).i64(*amount);
            }
            ProgramCall::Read { address } => {
                h.u8(3).u32(address.0);
            }
            ProgramCall::Noop => {
                h.u8(4);
            }
        }
    }
}

/// Compact form used in trace files: `SET:a3:7`, `TRANSFER:a0:a1:5`,
/// `READ:a2`, `NOOP`.
impl fmt::Display for ProgramCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProgramCall::Set { address, value } => write!(f, "SET:{address}:{value}"),
            ProgramCall::Transfer { from, to, amount } => {
                write!(f, "TRANSFER:{from}:{to}:{amount}")
            }
            ProgramCall::Read { address } => write!(f, "READ:{address}"),
            ProgramCall::Noop => write!(f, "NOOP"),
        }
    }
}

impl FromStr for ProgramCall {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let addr = |p: &str| p.parse::<Address>();
        let val = |p: &str| p.parse::<Value>().map_err(|e| format!("bad value {p:?}: {e}"));
        match parts.as_slice() {
            ["SET", a, v] => Ok(ProgramCall::Set {
                address: addr(a)?,
                value: val(v)?,
            }),
            ["TRANSFER", from, to, amt] => Ok(ProgramCall::Transfer {
                from: addr(from)?,
                to: addr(to)?,
                amount: val(amt)?,
            }),
            ["READ", a] => Ok(ProgramCall::Read { address: addr(a)? }),
            ["NOOP"] => Ok(ProgramCall::Noop),
            _ => Err(format!("unknown program {s:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExecStatus {
    Committed,
    Aborted,
}

/// Result of running a program against a snapshot. Nothing is applied.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ExecResult {
    pub status: ExecStatus,
    pub readset: Vec<(Address, Version)>,
    pub writeset: Vec<(Address, Value)>,
}

impl ExecResult {
    pub fn touched(&self) -> impl Iterator<Item = Address> + '_ {
        self.readset
            .iter()
            .map(|(a, _)| *a)
            .chain(self.writeset.iter().map(|(a, _)| *a))
    }
}

/// Run `call` on `snapshot`. Pure: the snapshot is only read.
pub fn execute_program(snapshot: &VersionedStore, call: &ProgramCall) -> ExecResult {
    let mut readset = Vec::new();
    let mut read = |a: Address| {
        let (v, ver) = snapshot.get_versioned(a);
        readset.push((a, ver));
        v
    };
    match call {
        ProgramCall::Set { address, value } => ExecResult {
            status: ExecStatus::Committed,
            readset,
            writeset: vec![(*address, *value)],
        },
        ProgramCall::Transfer { from, to, amount } => {
            let from_balance = read(*from);
            if from == to {
                let status = if from_balance < *amount {
                    ExecStatus::Aborted
                } else {
                    ExecStatus::Committed
                };
                return ExecResult {
                    status,
                    readset,
                    writeset: Vec::new(),
                };
            }
            let to_balance = read(*to);
            if from_balance < *amount {
                ExecResult {
                    status: ExecStatus::Aborted,
                    readset,
                    writeset: Vec::new(),
                }
            } else {
                ExecResult {
                    status: ExecStatus::Committed,
                    readset,
                    writeset: vec![(*from, from_balance - amount), (*to, to_balance + amount)],
                }
            }
        }
        ProgramCall::Read { address } => {
            read(*address);
            ExecResult {
                status: ExecStatus::Committed,
                readset,
                writeset: Vec::new(),
            }
        }
        ProgramCall::Noop => ExecResult {
            status: ExecStatus::Committed,
            readset: Vec::new(),
            writeset: Vec::new(),
        },
    }
}
