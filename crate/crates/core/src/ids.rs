//! Identifiers, digests and the repository-wide stable hash.
//!
//! Every hash in this crate (transaction ids, block ids, state digests, RNG
//! stream derivation) goes through [`StableHasher`], which is 64-bit FNV-1a
//! over an explicit little-endian encoding. The encoding never depends on the
//! host's pointer width or endianness, so hashes are identical on every
//! platform.

use std::fmt;
use std::hash::Hasher;
use std::str::FromStr;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

/// FNV-1a 64 over explicitly little-endian encoded fields.
#[derive(Default)]
pub struct StableHasher(FnvHasher);

impl StableHasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.0.write(&[v]);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.0.write(&v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.0.write(&v.to_le_bytes());
        self
    }

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.0.write(&v.to_le_bytes());
        self
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.u64(b.len() as u64);
        self.0.write(b);
        self
    }

    pub fn finish(&self) -> u64 {
        self.0.finish()
    }
}

macro_rules! small_id {
    ($name:ident, $prefix:literal) => {
        #[derive(
            Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                s.strip_prefix($prefix)
                    .and_then(|rest| rest.parse().ok())
                    .map($name)
                    .ok_or_else(|| format!("expected {}<n>, got {s:?}", $prefix))
            }
        }
    };
}

small_id!(NodeId, "n");
small_id!(ClientId, "c");
small_id!(Address, "a");

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

macro_rules! hash_id {
    ($name:ident) => {
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{:016x}", self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!(stringify!($name), "({:016x})"), self.0)
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                if s.len() != 16 {
                    return Err(format!("expected 16 hex digits, got {s:?}"));
                }
                u64::from_str_radix(s, 16)
                    .map($name)
                    .map_err(|e| format!("bad hex {s:?}: {e}"))
            }
        }
    };
}

hash_id!(TxId);
hash_id!(BlockId);
hash_id!(Digest);

/// Account values are plain integers.
pub type Value = i64;

/// Version of a stored value: the block height and index of the writing
/// transaction. Genesis entries carry `(0, 0)`.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Version {
    pub height: u64,
    pub index: u32,
}

impl Version {
    pub const GENESIS: Version = Version { height: 0, index: 0 };

    pub fn new(height: u64, index: u32) -> Self {
        Self { height, index }
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.height, self.index)
    }
}

/// Position of a committed transaction in a node's ledger.
pub type Position = Version;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_empty_is_offset_basis() {
        assert_eq!(StableHasher::new().finish(), 0xcbf2_9ce4_8422_2325);
    }

    #[test]
    fn ids_round_trip_through_display() {
        let n: NodeId = "n12".parse().unwrap();
        assert_eq!(n, NodeId(12));
        assert_eq!(n.to_string(), "n12");
        let t = TxId(0xdead_beef);
        assert_eq!(t.to_string().parse::<TxId>().unwrap(), t);
        assert!("x3".parse::<ClientId>().is_err());
        assert!("abc".parse::<TxId>().is_err());
    }

    #[test]
    fn hashing_is_field_order_sensitive() {
        let a = StableHasher::new().u64(1).u64(2).finish();
        let b = StableHasher::new().u64(2).u64(1).finish();
        assert_ne!(a, b);
    }
}
