//! Exact rationals for probabilities, thresholds and overlap ratios.
//!
//! Configs write them as `"num/den"` strings (or bare integers `0`, `1`).
//! All comparisons are done by cross-multiplication, never via floats.

use std::fmt;
use std::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ratio {
    num: u64,
    den: u64,
}

impl Ratio {
    pub const ZERO: Ratio = Ratio { num: 0, den: 1 };
    pub const ONE: Ratio = Ratio { num: 1, den: 1 };

    pub fn new(num: u64, den: u64) -> Option<Self> {
        (den != 0).then_some(Self { num, den })
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    pub fn is_unit_interval(&self) -> bool {
        self.num <= self.den
    }

    /// `count / total >= self`
    pub fn reached_by(&self, count: usize, total: usize) -> bool {
        (count as u128) * (self.den as u128) >= (self.num as u128) * (total as u128)
    }

    /// Smallest integer `k` with `k >= self * total`.
    pub fn ceil_mul(&self, total: usize) -> usize {
        let p = self.num as u128 * total as u128;
        p.div_ceil(self.den as u128) as usize
    }

    /// True with probability `self`, given a uniform draw in `[0, den)`.
    pub fn accepts(&self, draw: u64) -> bool {
        draw < self.num
    }
}

impl PartialOrd for Ratio {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ratio {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.num as u128 * other.den as u128).cmp(&(other.num as u128 * self.den as u128))
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Ratio {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (n, d) = match s.split_once('/') {
            Some((n, d)) => (n.trim(), d.trim()),
            None => (s, "1"),
        };
        let num: u64 = n.parse().map_err(|_| format!("bad ratio {s:?}"))?;
        let den: u64 = d.parse().map_err(|_| format!("bad ratio {s:?}"))?;
        Ratio::new(num, den).ok_or_else(|| format!("zero denominator in {s:?}"))
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(n) => Ok(Ratio { num: n, den: 1 }),
            Raw::Str(s) => s.parse().map_err(de::Error::custom),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_compare() {
        let r: Ratio = "4/5".parse().unwrap();
        assert!(r.reached_by(4, 5));
        assert!(!r.reached_by(3, 5));
        assert_eq!(r.ceil_mul(10), 8);
        assert_eq!("1/2".parse::<Ratio>().unwrap().ceil_mul(4), 2);
        assert!("1/0".parse::<Ratio>().is_err());
        assert!(Ratio::new(9, 10).unwrap() > Ratio::new(3, 5).unwrap());
    }

    #[test]
    fn serde_accepts_strings_and_ints() {
        let r: Ratio = serde_json::from_str("\"3/10\"").unwrap();
        assert_eq!(r, Ratio::new(3, 10).unwrap());
        let one: Ratio = serde_json::from_str("1").unwrap();
        assert_eq!(one, Ratio::ONE);
        assert_eq!(serde_json::to_string(&r).unwrap(), "\"3/10\"");
    }
}
