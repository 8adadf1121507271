//! Trace checkers for the four correctness criteria.
//!
//! Each checker is a pure function of a [`Trace`]. Only replicas whose
//! `NODE` record says `correct` are held to the criteria; byzantine and
//! crashed-without-recovery replicas are ignored, as are acks and reads
//! they served.

mod atomicity;
mod durability;
mod serializability;
mod session;
mod view;

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::trace::Trace;

pub use serializability::{brute_force_serializable, fast_path, FastPath, ORACLE_LIMIT};
pub use view::TraceView;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Criterion {
    Durability,
    Atomicity,
    OneCopySerializability,
    Session,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [
        Criterion::Durability,
        Criterion::Atomicity,
        Criterion::OneCopySerializability,
        Criterion::Session,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Durability => "durability",
            Criterion::Atomicity => "atomicity",
            Criterion::OneCopySerializability => "1cs",
            Criterion::Session => "session",
        }
    }

    /// Parse `all` or a comma-separated list of criterion names.
    pub fn parse_list(s: &str) -> Result<Vec<Criterion>, String> {
        if s.trim() == "all" {
            return Ok(Self::ALL.to_vec());
        }
        let mut out: Vec<Criterion> = s
            .split(',')
            .map(|p| p.trim().parse())
            .collect::<Result<_, _>>()?;
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Criterion {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown checker {s:?} (expected durability, atomicity, 1cs, session or all)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Status {
    Pass,
    Violated,
}

/// Trace record indices that together demonstrate one violation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Witness {
    pub reason: String,
    pub events: Vec<usize>,
}

impl Witness {
    pub fn new(reason: impl Into<String>, mut events: Vec<usize>) -> Self {
        events.sort_unstable();
        events.dedup();
        Witness {
            reason: reason.into(),
            events,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub criterion: Criterion,
    pub status: Status,
    pub witnesses: Vec<Witness>,
    pub warnings: Vec<String>,
}

impl Verdict {
    fn from_witnesses(criterion: Criterion, witnesses: Vec<Witness>, warnings: Vec<String>) -> Self {
        let status = if witnesses.is_empty() {
            Status::Pass
        } else {
            Status::Violated
        };
        Verdict {
            criterion,
            status,
            witnesses,
            warnings,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckError {
    #[error("record {index}: {msg}")]
    Structure { index: usize, msg: String },
}

pub fn check(trace: &Trace, criterion: Criterion) -> Result<Verdict, CheckError> {
    let view = TraceView::build(trace)?;
    Ok(check_view(&view, criterion))
}

pub fn check_view(view: &TraceView, criterion: Criterion) -> Verdict {
    match criterion {
        Criterion::Durability => durability::check(view),
        Criterion::Atomicity => atomicity::check(view),
        Criterion::OneCopySerializability => serializability::check(view),
        Criterion::Session => session::check(view),
    }
}

pub fn check_all(trace: &Trace, criteria: &[Criterion]) -> Result<Vec<Verdict>, CheckError> {
    let view = TraceView::build(trace)?;
    Ok(criteria.iter().map(|c| check_view(&view, *c)).collect())
}

/// A witness is valid when its indices exist and appear in trace order.
pub fn witness_is_valid(trace: &Trace, w: &Witness) -> bool {
    !w.events.is_empty()
        && w.events.iter().all(|i| *i < trace.records.len())
        && w.events.windows(2).all(|p| p[0] < p[1])
}
