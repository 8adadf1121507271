use super::view::{LedgerOp, TraceView};
use super::{Criterion, Verdict, Witness};

/// Violated when a correct node reverts a transaction it had committed, or
/// when an acknowledged transaction is missing from a correct node's final
/// committed set.
pub(super) fn check(view: &TraceView) -> Verdict {
    let mut witnesses = Vec::new();
    for node in &view.correct {
        let Some(history) = view.history.get(node) else {
            continue;
        };
        for (tx, ops) in history {
            let mut last_commit = None;
            for op in ops {
                match op {
                    LedgerOp::Commit(c) => last_commit = Some(c.index),
                    LedgerOp::Revert { index } => {
                        if let Some(c) = last_commit.take() {
                            witnesses.push(Witness::new(
                                format!("{node} reverted committed {tx}"),
                                vec![c, *index],
                            ));
                        }
                    }
                }
            }
        }
    }
    for ack in &view.acks {
        if !view.is_correct(ack.node) {
            continue;
        }
        for node in &view.correct {
            let present = view.live.get(node).is_some_and(|l| l.contains_key(&ack.tx));
            if !present {
                let mut events = vec![ack.index];
                events.extend(view.final_index(*node));
                witnesses.push(Witness::new(
                    format!("acked {} absent from final ledger of {node}", ack.tx),
                    events,
                ));
            }
        }
    }
    Verdict::from_witnesses(Criterion::Durability, witnesses, Vec::new())
}
