use std::collections::BTreeSet;

use crate::ids::NodeId;
use crate::ratio::Ratio;

/// Slot owner under round-robin authority scheduling.
pub fn slot_owner(authorities: &[NodeId], slot: u64) -> NodeId {
    authorities[(slot % authorities.len() as u64) as usize]
}

/// Minimum distance between two blocks by the same miner:
/// `ceil(diversity * |miners|)`.
pub fn spacing(diversity: Ratio, miners: usize) -> usize {
    diversity.ceil_mul(miners)
}

/// Miners allowed to produce the next block given the producers of the most
/// recent blocks (newest last). A miner is ineligible if it produced any of
/// the last `spacing - 1` blocks.
pub fn eligible_proposers(
    recent_producers: &[NodeId],
    diversity: Ratio,
    miners: &[NodeId],
) -> Result<BTreeSet<NodeId>, String> {
    let s = spacing(diversity, miners.len());
    if miners.len() < s {
        return Err(format!(
            "diversity {diversity} needs at least {s} miners, have {}",
            miners.len()
        ));
    }
    let window = s.saturating_sub(1);
    let recent: BTreeSet<NodeId> = recent_producers
        .iter()
        .rev()
        .take(window)
        .copied()
        .collect();
    Ok(miners
        .iter()
        .copied()
        .filter(|m| !recent.contains(m))
        .collect())
}

/// Clique-style recency: a signer may sign at most once in any
/// `floor(n/2) + 1` consecutive blocks.
pub fn recently_signed(recent_producers: &[NodeId], signer: NodeId, signers: usize) -> bool {
    recent_producers
        .iter()
        .rev()
        .take(signers / 2)
        .any(|p| *p == signer)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(ids: &[u32]) -> Vec<NodeId> {
        ids.iter().copied().map(NodeId).collect()
    }

    #[test]
    fn zero_diversity_leaves_everyone_eligible() {
        let all = m(&[1, 2, 3, 4]);
        let e = eligible_proposers(&m(&[1, 2, 3]), Ratio::ZERO, &all).unwrap();
        assert_eq!(e.len(), 4);
    }

    #[test]
    fn full_diversity_forces_rotation() {
        // spacing = 4, window = 3: the last three producers sit out.
        let e = eligible_proposers(&m(&[1, 2, 3]), Ratio::ONE, &m(&[1, 2, 3, 4])).unwrap();
        assert_eq!(e, m(&[4]).into_iter().collect());
    }

    #[test]
    fn half_diversity_excludes_only_the_last_producer() {
        // spacing = ceil(0.5 * 4) = 2, window = 1.
        let e = eligible_proposers(&m(&[1]), Ratio::new(1, 2).unwrap(), &m(&[1, 2, 3, 4])).unwrap();
        assert_eq!(e, m(&[2, 3, 4]).into_iter().collect());
    }

    #[test]
    fn never_empty_when_enough_miners() {
        for d in 0..=10u64 {
            let div = Ratio::new(d, 10).unwrap();
            let miners = m(&[0, 1, 2, 3, 4]);
            // Worst case: the window is filled with distinct miners.
            let recent = m(&[0, 1, 2, 3, 4]);
            assert!(!eligible_proposers(&recent, div, &miners).unwrap().is_empty());
        }
    }

    #[test]
    fn slot_rotation() {
        let a = m(&[5, 6, 7]);
        assert_eq!(slot_owner(&a, 0), NodeId(5));
        assert_eq!(slot_owner(&a, 4), NodeId(6));
    }

    #[test]
    fn clique_recency_window() {
        // 4 signers: may sign once per 3 blocks, so the last 2 matter.
        assert!(recently_signed(&m(&[0, 1]), NodeId(0), 4));
        assert!(!recently_signed(&m(&[0, 1, 2]), NodeId(0), 4));
    }
}
