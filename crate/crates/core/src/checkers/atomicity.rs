use std::collections::BTreeSet;

use super::view::TraceView;
use super::{Criterion, Verdict, Witness};

/// Violated when two correct nodes end with different outcomes for the same
/// transaction or with different committed sets.
pub(super) fn check(view: &TraceView) -> Verdict {
    let mut witnesses = Vec::new();
    let nodes: Vec<_> = view.correct.iter().copied().collect();
    let all: BTreeSet<_> = nodes.iter().flat_map(|n| view.live_set(*n)).collect();
    for tx in &all {
        let mut first: Option<(crate::ids::NodeId, super::view::LiveCommit)> = None;
        for node in &nodes {
            match view.live.get(node).and_then(|l| l.get(tx)) {
                Some(c) => match first {
                    None => first = Some((*node, *c)),
                    Some((n0, c0)) if c0.outcome != c.outcome => {
                        witnesses.push(Witness::new(
                            format!(
                                "{tx} is {} at {n0} but {} at {node}",
                                c0.outcome, c.outcome
                            ),
                            vec![c0.index, c.index],
                        ));
                    }
                    Some(_) => {}
                },
                None => {
                    let holder = nodes
                        .iter()
                        .find_map(|n| view.live.get(n).and_then(|l| l.get(tx)).map(|c| (*n, c)));
                    if let Some((h, c)) = holder {
                        let mut events = vec![c.index];
                        events.extend(view.final_index(*node));
                        witnesses.push(Witness::new(
                            format!("{tx} committed at {h} but not at {node}"),
                            events,
                        ));
                    }
                }
            }
        }
    }
    Verdict::from_witnesses(Criterion::Atomicity, witnesses, Vec::new())
}
