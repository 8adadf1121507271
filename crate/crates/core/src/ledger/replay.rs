use super::program::{execute_program, ExecStatus, ProgramCall};
use super::store::VersionedStore;
use super::tx::TxOutcome;
use crate::ids::Version;

/// Execute `call` on `store` and apply its writes at `version` when it
/// commits.
pub fn apply_call(store: &mut VersionedStore, call: &ProgramCall, version: Version) -> TxOutcome {
    let r = execute_program(store, call);
    if r.status == ExecStatus::Committed {
        store
            .apply_writeset(&r.writeset, version)
            .expect("serial application uses increasing versions");
    }
    r.status.into()
}

/// Serial execution of `calls` from `genesis`; the i-th call runs at
/// version `(1, i)`.
pub fn replay<'a>(
    genesis: &VersionedStore,
    calls: impl IntoIterator<Item = &'a ProgramCall>,
) -> (VersionedStore, Vec<TxOutcome>) {
    let mut store = genesis.clone();
    let outcomes = calls
        .into_iter()
        .enumerate()
        .map(|(i, call)| apply_call(&mut store, call, Version::new(1, i as u32)))
        .collect();
    (store, outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::Address;

    #[test]
    fn empty_sequence_is_genesis() {
        let g = VersionedStore::genesis([(Address(0), 9)]);
        let (s, o) = replay(&g, []);
        assert_eq!(s, g);
        assert!(o.is_empty());
    }

    #[test]
    fn second_transfer_aborts_on_short_balance() {
        // a=7: first move of 5 leaves 2, second move of 5 cannot proceed.
        let g = VersionedStore::genesis([(Address(0), 7), (Address(1), 0)]);
        let t = ProgramCall::Transfer {
            from: Address(0),
            to: Address(1),
            amount: 5,
        };
        let (s, o) = replay(&g, [&t, &t]);
        assert_eq!(o, vec![TxOutcome::Committed, TxOutcome::Aborted]);
        assert_eq!(s.get(Address(0)), Some(2));
        assert_eq!(s.get(Address(1)), Some(5));
    }
}
