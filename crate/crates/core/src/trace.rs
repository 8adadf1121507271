//! Observed events and the line-oriented trace file format.
//!
//! One record per line, space separated: record type, time, then
//! type-specific fields in a fixed order.
//!
//! ```text
//! META 0 <protocol> <seed> <replicas>
//! GENESIS 0 <address> <value>
//! SUBMIT <t> <client> <seq> <tx> <entry> <program> r=<addrs> w=<addrs> d=<txs>
//! ACK <t> <client> <tx> <node> <outcome>
//! COMMIT <t> <node> <tx> <outcome> <height> <index>
//! REVERT <t> <node> <tx>
//! READ <t> <client> <node> <address> <value>
//! LEDGER <t> <node> <height> <validated|pending|diverged> <digest>
//! NODE <t> <node> <correct|byzantine|crashed-uncovered>
//! FINAL <t> <node> <digest>
//! ```
//!
//! Address, tx and dependency lists are comma separated, `-` when empty.
//! A file must end with exactly `<replicas>` FINAL records, so a file cut
//! short at a line boundary is still rejected.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::ids::{Address, ClientId, Digest, NodeId, Position, TxId, Value, Version};
use crate::ledger::{ProgramCall, TxOutcome, TxRequest, VersionedStore};
use crate::sim::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LedgerStatus {
    Validated,
    Pending,
    Diverged,
}

impl LedgerStatus {
    fn as_str(self) -> &'static str {
        match self {
            LedgerStatus::Validated => "validated",
            LedgerStatus::Pending => "pending",
            LedgerStatus::Diverged => "diverged",
        }
    }
}

impl FromStr for LedgerStatus {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "validated" => LedgerStatus::Validated,
            "pending" => LedgerStatus::Pending,
            "diverged" => LedgerStatus::Diverged,
            _ => return Err(format!("unknown ledger status {s:?}")),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Correctness {
    Correct,
    Byzantine,
    /// Crashed and not recovered by the end of the run.
    CrashedUncovered,
}

impl Correctness {
    fn as_str(self) -> &'static str {
        match self {
            Correctness::Correct => "correct",
            Correctness::Byzantine => "byzantine",
            Correctness::CrashedUncovered => "crashed-uncovered",
        }
    }
}

impl FromStr for Correctness {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "correct" => Correctness::Correct,
            "byzantine" => Correctness::Byzantine,
            "crashed-uncovered" => Correctness::CrashedUncovered,
            _ => return Err(format!("unknown correctness {s:?}")),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Event {
    Meta {
        protocol: String,
        seed: u64,
        replicas: usize,
    },
    Genesis {
        address: Address,
        value: Value,
    },
    Submit {
        tx: TxRequest,
        entry: NodeId,
    },
    Ack {
        client: ClientId,
        tx: TxId,
        node: NodeId,
        outcome: TxOutcome,
    },
    Commit {
        node: NodeId,
        tx: TxId,
        outcome: TxOutcome,
        position: Position,
    },
    Revert {
        node: NodeId,
        tx: TxId,
    },
    Read {
        client: ClientId,
        node: NodeId,
        address: Address,
        value: Value,
    },
    Ledger {
        node: NodeId,
        height: u64,
        status: LedgerStatus,
        digest: Digest,
    },
    NodeStatus {
        node: NodeId,
        correctness: Correctness,
    },
    Final {
        node: NodeId,
        digest: Digest,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub time: SimTime,
    pub event: Event,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("trace io: {0}")]
    Io(#[from] std::io::Error),
}

/// The complete record of a run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub records: Vec<Record>,
}

fn join<T: fmt::Display>(items: impl IntoIterator<Item = T>) -> String {
    let parts: Vec<String> = items.into_iter().map(|x| x.to_string()).collect();
    if parts.is_empty() {
        "-".to_string()
    } else {
        parts.join(",")
    }
}

fn split_list<T: FromStr<Err = String> + Ord>(s: &str) -> Result<BTreeSet<T>, String> {
    if s == "-" {
        return Ok(BTreeSet::new());
    }
    s.split(',').map(str::parse).collect()
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.time;
        match &self.event {
            Event::Meta {
                protocol,
                seed,
                replicas,
            } => write!(f, "META {t} {protocol} {seed} {replicas}"),
            Event::Genesis { address, value } => write!(f, "GENESIS {t} {address} {value}"),
            Event::Submit { tx, entry } => write!(
                f,
                "SUBMIT {t} {} {} {} {entry} {} r={} w={} d={}",
                tx.client,
                tx.seq,
                tx.id,
                tx.call,
                join(&tx.declared_reads),
                join(&tx.declared_writes),
                join(&tx.deps)
            ),
            Event::Ack {
                client,
                tx,
                node,
                outcome,
            } => write!(f, "ACK {t} {client} {tx} {node} {outcome}"),
            Event::Commit {
                node,
                tx,
                outcome,
                position,
            } => write!(
                f,
                "COMMIT {t} {node} {tx} {outcome} {} {}",
                position.height, position.index
            ),
            Event::Revert { node, tx } => write!(f, "REVERT {t} {node} {tx}"),
            Event::Read {
                client,
                node,
                address,
                value,
            } => write!(f, "READ {t} {client} {node} {address} {value}"),
            Event::Ledger {
                node,
                height,
                status,
                digest,
            } => write!(f, "LEDGER {t} {node} {height} {} {digest}", status.as_str()),
            Event::NodeStatus { node, correctness } => {
                write!(f, "NODE {t} {node} {}", correctness.as_str())
            }
            Event::Final { node, digest } => write!(f, "FINAL {t} {node} {digest}"),
        }
    }
}

fn parse_record(line: &str) -> Result<Record, String> {
    let f: Vec<&str> = line.split(' ').collect();
    let arity = |n: usize| {
        if f.len() == n {
            Ok(())
        } else {
            Err(format!("{} expects {} fields, found {}", f[0], n, f.len()))
        }
    };
    let p = |s: &str| -> Result<u64, String> { s.parse().map_err(|_| format!("bad integer {s:?}")) };
    if f.len() < 2 {
        return Err("missing record type or time".into());
    }
    let time = p(f[1])?;
    let event = match f[0] {
        "META" => {
            arity(5)?;
            Event::Meta {
                protocol: f[2].to_string(),
                seed: p(f[3])?,
                replicas: p(f[4])? as usize,
            }
        }
        "GENESIS" => {
            arity(4)?;
            Event::Genesis {
                address: f[2].parse()?,
                value: f[3].parse().map_err(|_| format!("bad value {:?}", f[3]))?,
            }
        }
        "SUBMIT" => {
            arity(10)?;
            let field = |s: &str, key: &str| {
                s.strip_prefix(key)
                    .map(str::to_string)
                    .ok_or_else(|| format!("expected {key}..., got {s:?}"))
            };
            let call: ProgramCall = f[6].parse()?;
            let reads = split_list(&field(f[7], "r=")?)?;
            let writes = split_list(&field(f[8], "w=")?)?;
            let deps = split_list(&field(f[9], "d=")?)?;
            let tx = TxRequest {
                id: f[4].parse()?,
                client: f[2].parse()?,
                seq: p(f[3])?,
                call,
                declared_reads: reads,
                declared_writes: writes,
                deps,
            };
            if !tx.id_is_consistent() {
                return Err(format!("tx id {} does not match its content", tx.id));
            }
            Event::Submit {
                tx,
                entry: f[5].parse()?,
            }
        }
        "ACK" => {
            arity(6)?;
            Event::Ack {
                client: f[2].parse()?,
                tx: f[3].parse()?,
                node: f[4].parse()?,
                outcome: f[5].parse()?,
            }
        }
        "COMMIT" => {
            arity(7)?;
            Event::Commit {
                node: f[2].parse()?,
                tx: f[3].parse()?,
                outcome: f[4].parse()?,
                position: Version::new(p(f[5])?, p(f[6])? as u32),
            }
        }
        "REVERT" => {
            arity(4)?;
            Event::Revert {
                node: f[2].parse()?,
                tx: f[3].parse()?,
            }
        }
        "READ" => {
            arity(6)?;
            Event::Read {
                client: f[2].parse()?,
                node: f[3].parse()?,
                address: f[4].parse()?,
                value: f[5].parse().map_err(|_| format!("bad value {:?}", f[5]))?,
            }
        }
        "LEDGER" => {
            arity(6)?;
            Event::Ledger {
                node: f[2].parse()?,
                height: p(f[3])?,
                status: f[4].parse()?,
                digest: f[5].parse()?,
            }
        }
        "NODE" => {
            arity(4)?;
            Event::NodeStatus {
                node: f[2].parse()?,
                correctness: f[3].parse()?,
            }
        }
        "FINAL" => {
            arity(4)?;
            Event::Final {
                node: f[2].parse()?,
                digest: f[3].parse()?,
            }
        }
        other => return Err(format!("unknown record type {other:?}")),
    };
    Ok(Record { time, event })
}

impl Trace {
    pub fn push(&mut self, time: SimTime, event: Event) {
        self.records.push(Record { time, event });
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            writeln!(s, "{r}").expect("writing to a String");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Trace, TraceError> {
        let err = |line: usize, msg: String| TraceError::Parse { line, msg };
        let mut records = Vec::new();
        let mut last_time = 0;
        let mut replicas = None;
        let mut line_no = 0;
        let mut rest = text;
        while !rest.is_empty() {
            line_no += 1;
            let Some((line, tail)) = rest.split_once('\n') else {
                return Err(err(line_no, "unterminated line (file truncated?)".into()));
            };
            rest = tail;
            let r = parse_record(line).map_err(|m| err(line_no, m))?;
            if r.time < last_time {
                return Err(err(line_no, format!("time {} goes backwards", r.time)));
            }
            last_time = r.time;
            match (&r.event, line_no) {
                (Event::Meta { replicas: n, .. }, 1) => replicas = Some(*n),
                (Event::Meta { .. }, _) => return Err(err(line_no, "META must be first".into())),
                (_, 1) => return Err(err(1, "trace must start with META".into())),
                _ => {}
            }
            records.push(r);
        }
        let Some(replicas) = replicas else {
            return Err(err(1, "empty trace".into()));
        };
        let finals = records
            .iter()
            .rev()
            .take_while(|r| matches!(r.event, Event::Final { .. }))
            .count();
        let total_finals = records
            .iter()
            .filter(|r| matches!(r.event, Event::Final { .. }))
            .count();
        if finals != replicas || total_finals != replicas {
            return Err(err(
                line_no + 1,
                format!("expected {replicas} trailing FINAL records, found {finals} (file truncated?)"),
            ));
        }
        Ok(Trace { records })
    }

    pub fn write_to(&self, path: &Path) -> Result<(), TraceError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Trace, TraceError> {
        let text = std::fs::read_to_string(path)?;
        Trace::parse(&text)
    }

    pub fn events(&self) -> impl Iterator<Item = (usize, &Record)> + '_ {
        self.records.iter().enumerate()
    }

    pub fn protocol(&self) -> Option<&str> {
        self.records.iter().find_map(|r| match &r.event {
            Event::Meta { protocol, .. } => Some(protocol.as_str()),
            _ => None,
        })
    }

    pub fn genesis(&self) -> VersionedStore {
        VersionedStore::genesis(self.records.iter().filter_map(|r| match r.event {
            Event::Genesis { address, value } => Some((address, value)),
            _ => None,
        }))
    }

    pub fn submissions(&self) -> impl Iterator<Item = &TxRequest> + '_ {
        self.records.iter().filter_map(|r| match &r.event {
            Event::Submit { tx, .. } => Some(tx),
            _ => None,
        })
    }

    pub fn ledger_statuses(&self) -> impl Iterator<Item = LedgerStatus> + '_ {
        self.records.iter().filter_map(|r| match r.event {
            Event::Ledger { status, .. } => Some(status),
            _ => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trace {
        let mut t = Trace::default();
        t.push(
            0,
            Event::Meta {
                protocol: "quorum-ibft".into(),
                seed: 3,
                replicas: 2,
            },
        );
        t.push(
            0,
            Event::Genesis {
                address: Address(0),
                value: 10,
            },
        );
        let tx = TxRequest::simple(
            ClientId(1),
            1,
            ProgramCall::Transfer {
                from: Address(0),
                to: Address(1),
                amount: 4,
            },
        );
        let id = tx.id;
        t.push(1, Event::Submit { tx, entry: NodeId(0) });
        t.push(
            5,
            Event::Commit {
                node: NodeId(0),
                tx: id,
                outcome: TxOutcome::Committed,
                position: Version::new(1, 0),
            },
        );
        t.push(
            5,
            Event::Ack {
                client: ClientId(1),
                tx: id,
                node: NodeId(0),
                outcome: TxOutcome::Committed,
            },
        );
        t.push(
            6,
            Event::Read {
                client: ClientId(1),
                node: NodeId(1),
                address: Address(1),
                value: -4,
            },
        );
        t.push(
            7,
            Event::Ledger {
                node: NodeId(1),
                height: 1,
                status: LedgerStatus::Diverged,
                digest: Digest(9),
            },
        );
        t.push(8, Event::Revert { node: NodeId(0), tx: id });
        t.push(
            9,
            Event::NodeStatus {
                node: NodeId(1),
                correctness: Correctness::CrashedUncovered,
            },
        );
        t.push(9, Event::Final { node: NodeId(0), digest: Digest(1) });
        t.push(9, Event::Final { node: NodeId(1), digest: Digest(2) });
        t
    }

    #[test]
    fn text_round_trip() {
        let t = sample();
        let text = t.to_text();
        assert_eq!(Trace::parse(&text).unwrap(), t);
        assert!(text.starts_with("META 0 quorum-ibft 3 2\n"));
    }

    #[test]
    fn truncation_is_reported_at_cut_point() {
        let text = sample().to_text();
        let lines: Vec<&str> = text.lines().collect();
        // Cut at a line boundary: FINAL records missing.
        let cut: String = lines[..6].iter().map(|l| format!("{l}\n")).collect();
        match Trace::parse(&cut) {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("expected parse error, got {other:?}"),
        }
        // Cut mid-line.
        let partial = &text[..text.len() - 5];
        match Trace::parse(partial) {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, lines.len()),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_names_its_number() {
        let mut text = sample().to_text();
        text = text.replacen("REVERT 8", "REVERT x", 1);
        match Trace::parse(&text) {
            Err(TraceError::Parse { line, msg }) => {
                assert_eq!(line, 8);
                assert!(msg.contains("bad integer"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn tampered_tx_id_is_rejected() {
        let text = sample().to_text().replacen("TRANSFER:a0:a1:4", "TRANSFER:a0:a1:5", 1);
        assert!(Trace::parse(&text).is_err());
    }
}
