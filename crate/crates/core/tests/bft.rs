use std::collections::BTreeSet;
use std::time::Instant;

use permtx::bft::explore::{explore, ExploreConfig};
use permtx::ids::NodeId;

#[test]
fn exploration_finds_no_conflict_with_one_byzantine() {
    let t = Instant::now();
    let r = explore(&ExploreConfig {
        n: 4,
        byzantine: [NodeId(0)].into(),
        rounds: 3,
        max_states: 20_000_000,
    });
    eprintln!("{:?} in {:?}", r, t.elapsed());
    assert!(r.complete);
    assert_eq!(r.conflict, None);
}

#[test]
fn exploration_finds_a_conflict_with_two_byzantine() {
    let byz: BTreeSet<NodeId> = [NodeId(0), NodeId(1)].into();
    let r = explore(&ExploreConfig {
        n: 4,
        byzantine: byz,
        rounds: 3,
        max_states: 5_000_000,
    });
    assert!(r.conflict.is_some());
}
