use std::collections::BTreeMap;

use thiserror::Error;

use crate::ids::{Address, Digest, StableHasher, Value, Version};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StoreError {
    #[error("version regression at {address}: current {current}, attempted {attempted}")]
    VersionRegression {
        address: Address,
        current: Version,
        attempted: Version,
    },
    #[error("crash injected after {applied} of {total} journal entries")]
    Crashed { applied: usize, total: usize },
}

/// World state: address -> (value, version).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VersionedStore {
    entries: BTreeMap<Address, (Value, Version)>,
}

impl VersionedStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn genesis(entries: impl IntoIterator<Item = (Address, Value)>) -> Self {
        Self {
            entries: entries
                .into_iter()
                .map(|(a, v)| (a, (v, Version::GENESIS)))
                .collect(),
        }
    }

    /// Absent addresses read as `0` at the genesis version.
    pub fn get_versioned(&self, address: Address) -> (Value, Version) {
        self.entries
            .get(&address)
            .copied()
            .unwrap_or((0, Version::GENESIS))
    }

    pub fn get(&self, address: Address) -> Option<Value> {
        self.entries.get(&address).map(|(v, _)| *v)
    }

    pub fn version(&self, address: Address) -> Version {
        self.get_versioned(address).1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Address, Value, Version)> + '_ {
        self.entries.iter().map(|(a, (v, ver))| (*a, *v, *ver))
    }

    fn check_versions(
        &self,
        writeset: &[(Address, Value)],
        version: Version,
    ) -> Result<(), StoreError> {
        for (address, _) in writeset {
            if let Some((_, current)) = self.entries.get(address) {
                if version <= *current {
                    return Err(StoreError::VersionRegression {
                        address: *address,
                        current: *current,
                        attempted: version,
                    });
                }
            }
        }
        Ok(())
    }

    /// Apply a writeset atomically: every entry lands at `version`, or none do.
    pub fn apply_writeset(
        &mut self,
        writeset: &[(Address, Value)],
        version: Version,
    ) -> Result<(), StoreError> {
        self.check_versions(writeset, version)?;
        for (address, value) in writeset {
            self.entries.insert(*address, (*value, version));
        }
        Ok(())
    }

    /// Order-canonical digest over `(address, value)` pairs; versions are
    /// not part of the digest.
    pub fn digest(&self) -> Digest {
        let mut h = StableHasher::new();
        for (address, (value, _)) in &self.entries {
            h.u32(address.0).i64(*value);
        }
        Digest(h.finish())
    }
}

/// Digest of the empty store (FNV-1a 64 offset basis).
pub const EMPTY_STORE_DIGEST: Digest = Digest(0xcbf2_9ce4_8422_2325);

/// Write-ahead journal for a single writeset application.
///
/// The entry list is made durable before any store mutation. A crash during
/// application leaves a prefix applied; [`Journal::recover`] redoes the rest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Journal {
    entries: Vec<(Address, Value)>,
    version: Version,
    applied: usize,
}

impl Journal {
    pub fn is_complete(&self) -> bool {
        self.applied == self.entries.len()
    }

    pub fn recover(mut self, store: &mut VersionedStore) {
        for (address, value) in &self.entries[self.applied..] {
            store.entries.insert(*address, (*value, self.version));
        }
        self.applied = self.entries.len();
    }
}

/// Journaled application with an optional injected crash after
/// `crash_after` entries. On crash the partially applied store and the
/// journal are returned so a recovery step can finish the write.
pub fn apply_journaled(
    store: &mut VersionedStore,
    writeset: &[(Address, Value)],
    version: Version,
    crash_after: Option<usize>,
) -> Result<(), (StoreError, Journal)> {
    let mut journal = Journal {
        entries: writeset.to_vec(),
        version,
        applied: 0,
    };
    if let Err(e) = store.check_versions(writeset, version) {
        return Err((e, journal));
    }
    for (i, (address, value)) in writeset.iter().enumerate() {
        if crash_after == Some(i) {
            let total = writeset.len();
            return Err((StoreError::Crashed { applied: i, total }, journal));
        }
        store.entries.insert(*address, (*value, version));
        journal.applied = i + 1;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn a(i: u32) -> Address {
        Address(i)
    }

    #[test]
    fn empty_writeset_is_identity() {
        let mut s = VersionedStore::genesis([(a(0), 1)]);
        let before = s.clone();
        s.apply_writeset(&[], Version::new(1, 0)).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn write_lands_at_version() {
        let mut s = VersionedStore::genesis([(a(0), 5)]);
        s.apply_writeset(&[(a(0), 7)], Version::new(3, 0)).unwrap();
        assert_eq!(s.get_versioned(a(0)), (7, Version::new(3, 0)));
    }

    #[test]
    fn regression_is_rejected_and_nothing_applies() {
        let mut s = VersionedStore::new();
        s.apply_writeset(&[(a(0), 1)], Version::new(2, 0)).unwrap();
        let before = s.clone();
        let err = s
            .apply_writeset(&[(a(1), 9), (a(0), 2)], Version::new(1, 4))
            .unwrap_err();
        assert!(matches!(err, StoreError::VersionRegression { .. }));
        assert_eq!(s, before);
    }

    #[test]
    fn order_of_conflicting_writesets_changes_digest() {
        // x:1 then x:2 leaves x=2; reversed leaves x=1.
        let mut fwd = VersionedStore::new();
        fwd.apply_writeset(&[(a(0), 1)], Version::new(1, 0)).unwrap();
        fwd.apply_writeset(&[(a(0), 2)], Version::new(1, 1)).unwrap();
        let mut rev = VersionedStore::new();
        rev.apply_writeset(&[(a(0), 2)], Version::new(1, 0)).unwrap();
        rev.apply_writeset(&[(a(0), 1)], Version::new(1, 1)).unwrap();
        assert_ne!(fwd.digest(), rev.digest());
    }

    #[test]
    fn digest_ignores_insertion_order_and_versions() {
        let s1 = VersionedStore::genesis([(a(0), 1), (a(1), 2)]);
        let mut s2 = VersionedStore::new();
        s2.apply_writeset(&[(a(1), 2)], Version::new(1, 0)).unwrap();
        s2.apply_writeset(&[(a(0), 1)], Version::new(2, 0)).unwrap();
        assert_eq!(s1.digest(), s2.digest());
    }

    #[test]
    fn empty_digest_constant() {
        assert_eq!(VersionedStore::new().digest(), EMPTY_STORE_DIGEST);
        assert_ne!(
            VersionedStore::genesis([(a(0), 1)]).digest(),
            VersionedStore::genesis([(a(0), 2)]).digest()
        );
    }

    proptest! {
        #[test]
        fn journaled_apply_is_all_or_nothing_after_recovery(
            base in proptest::collection::btree_map(0u32..8, -50i64..50, 0..6),
            ws in proptest::collection::btree_map(0u32..8, -50i64..50, 0..6),
            crash in proptest::option::of(0usize..8),
        ) {
            let genesis = VersionedStore::genesis(base.iter().map(|(k, v)| (a(*k), *v)));
            let ws: Vec<_> = ws.into_iter().map(|(k, v)| (a(k), v)).collect();
            let version = Version::new(1, 0);

            let mut expected = genesis.clone();
            expected.apply_writeset(&ws, version).unwrap();

            let mut s = genesis.clone();
            match apply_journaled(&mut s, &ws, version, crash) {
                Ok(()) => prop_assert_eq!(&s, &expected),
                Err((StoreError::Crashed { .. }, journal)) => {
                    prop_assert!(!journal.is_complete());
                    journal.recover(&mut s);
                    prop_assert_eq!(&s, &expected);
                }
                Err((e, _)) => prop_assert!(false, "unexpected {e}"),
            }
        }

        #[test]
        fn digest_equality_matches_map_equality(
            x in proptest::collection::btree_map(0u32..6, -3i64..3, 0..5),
            y in proptest::collection::btree_map(0u32..6, -3i64..3, 0..5),
        ) {
            let sx = VersionedStore::genesis(x.iter().map(|(k, v)| (a(*k), *v)));
            let sy = VersionedStore::genesis(y.iter().map(|(k, v)| (a(*k), *v)));
            prop_assert_eq!(sx.digest() == sy.digest(), x == y);
        }
    }
}
