use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ids::NodeId;
use crate::ratio::Ratio;

use super::SimTime;

/// A bipartition active over `[start, end)`; `end = None` means it never
/// heals. Nodes in `side` are cut off from every node outside it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub start: SimTime,
    #[serde(default)]
    pub end: Option<SimTime>,
    pub side: BTreeSet<NodeId>,
}

impl Partition {
    pub fn active_at(&self, t: SimTime) -> bool {
        t >= self.start && self.end.is_none_or(|e| t < e)
    }

    pub fn separates(&self, a: NodeId, b: NodeId) -> bool {
        self.side.contains(&a) != self.side.contains(&b)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkModel {
    pub base_delay: SimTime,
    #[serde(default)]
    pub jitter: SimTime,
    #[serde(default = "zero_ratio")]
    pub drop: Ratio,
    #[serde(default)]
    pub partitions: Vec<Partition>,
}

fn zero_ratio() -> Ratio {
    Ratio::ZERO
}

impl Default for NetworkModel {
    fn default() -> Self {
        Self {
            base_delay: 2,
            jitter: 2,
            drop: Ratio::ZERO,
            partitions: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Delivery {
    At(SimTime),
    Dropped,
}

impl NetworkModel {
    pub fn separated(&self, a: NodeId, b: NodeId, t: SimTime) -> bool {
        self.partitions
            .iter()
            .any(|p| p.active_at(t) && p.separates(a, b))
    }

    /// Decide the fate of a message sent at `now`. Draws from `rng` only
    /// when the message is not cut by a partition.
    pub fn route(&self, from: NodeId, to: NodeId, now: SimTime, rng: &mut impl Rng) -> Delivery {
        debug_assert_ne!(from, to, "self-sends bypass the network");
        if self.separated(from, to, now) {
            return Delivery::Dropped;
        }
        if self.drop.num() > 0 && self.drop.accepts(rng.random_range(0..self.drop.den())) {
            return Delivery::Dropped;
        }
        let jitter = if self.jitter > 0 {
            rng.random_range(0..=self.jitter)
        } else {
            0
        };
        Delivery::At(now + self.base_delay + jitter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::rng::stream;

    fn net(base: u64, jitter: u64, drop: Ratio) -> NetworkModel {
        NetworkModel {
            base_delay: base,
            jitter,
            drop,
            partitions: Vec::new(),
        }
    }

    #[test]
    fn partition_drops_crossing_messages() {
        let mut n = net(2, 0, Ratio::ZERO);
        n.partitions.push(Partition {
            start: 10,
            end: Some(20),
            side: [NodeId(0)].into(),
        });
        let mut rng = stream(1, "t", 0);
        assert_eq!(n.route(NodeId(0), NodeId(1), 12, &mut rng), Delivery::Dropped);
        assert_eq!(n.route(NodeId(1), NodeId(2), 12, &mut rng), Delivery::At(14));
        assert_eq!(n.route(NodeId(0), NodeId(1), 20, &mut rng), Delivery::At(22));
        assert_eq!(n.route(NodeId(0), NodeId(1), 9, &mut rng), Delivery::At(11));
    }

    #[test]
    fn fixed_delay_without_jitter() {
        let n = net(2, 0, Ratio::ZERO);
        let mut rng = stream(1, "t", 0);
        assert_eq!(n.route(NodeId(0), NodeId(1), 4, &mut rng), Delivery::At(6));
    }

    #[test]
    fn drop_one_drops_everything() {
        let n = net(1, 3, Ratio::ONE);
        let mut rng = stream(3, "t", 0);
        for t in 0..50 {
            assert_eq!(n.route(NodeId(0), NodeId(1), t, &mut rng), Delivery::Dropped);
        }
    }

    #[test]
    fn delay_stays_within_jitter_bound() {
        let n = net(3, 4, Ratio::new(1, 4).unwrap());
        let mut rng = stream(9, "t", 0);
        for t in 0..500 {
            if let Delivery::At(d) = n.route(NodeId(0), NodeId(1), t, &mut rng) {
                assert!((t + 3..=t + 7).contains(&d));
            }
        }
    }
}
