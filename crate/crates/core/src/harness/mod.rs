//! Scenario runs, trace replay, the comparison suite and its report.

pub mod build;
pub mod config;
pub mod meta;
pub mod report;
pub mod scenarios;
pub mod suite;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::checkers::{check_all, CheckError, Criterion, Verdict};
use crate::ids::{Digest, NodeId};
use crate::sim::SimError;
use crate::trace::{Correctness, Event, LedgerStatus, Trace, TraceError};

pub use build::simulate;
pub use config::{Protocol, ScenarioConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Check(#[from] CheckError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Errors caused by the input rather than by the run itself.
    pub fn is_input_error(&self) -> bool {
        matches!(self, HarnessError::Config(_) | HarnessError::Trace(_) | HarnessError::Check(_))
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trace: Trace,
    pub verdicts: Vec<Verdict>,
}

impl RunOutput {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(Verdict::passed)
    }

    pub fn violated(&self, c: Criterion) -> bool {
        self.verdicts.iter().any(|v| v.criterion == c && !v.passed())
    }
}

/// Simulate and apply the scenario's checkers.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput, HarnessError> {
    let criteria = cfg.criteria()?;
    let trace = simulate(cfg)?;
    let verdicts = check_all(&trace, &criteria)?;
    Ok(RunOutput { trace, verdicts })
}

/// Same scenario at another seed.
pub fn run_seeded(cfg: &ScenarioConfig, seed: u64) -> Result<RunOutput, HarnessError> {
    let mut c = cfg.clone();
    c.seed = seed;
    run_scenario(&c)
}

/// Parse a persisted trace and re-check it.
pub fn replay_trace(text: &str, criteria: &[Criterion]) -> Result<Vec<Verdict>, HarnessError> {
    let trace = Trace::parse(text)?;
    Ok(check_all(&trace, criteria)?)
}

/// Ledger heights at which correct nodes disagree: a node reported a
/// diverged ledger, or two correct nodes validated different digests.
pub fn ledger_divergence(trace: &Trace) -> Vec<u64> {
    let correct: Vec<NodeId> = trace
        .records
        .iter()
        .filter_map(|r| match r.event {
            Event::NodeStatus {
                node,
                correctness: Correctness::Correct,
            } => Some(node),
            _ => None,
        })
        .collect();
    let mut validated: BTreeMap<u64, Vec<Digest>> = BTreeMap::new();
    let mut heights = Vec::new();
    for r in &trace.records {
        if let Event::Ledger {
            node,
            height,
            status,
            digest,
        } = r.event
        {
            if !correct.contains(&node) {
                continue;
            }
            match status {
                LedgerStatus::Diverged => heights.push(height),
                LedgerStatus::Validated => validated.entry(height).or_default().push(digest),
                LedgerStatus::Pending => {}
            }
        }
    }
    for (h, digests) in validated {
        if digests.windows(2).any(|w| w[0] != w[1]) {
            heights.push(h);
        }
    }
    heights.sort_unstable();
    heights.dedup();
    heights
}
