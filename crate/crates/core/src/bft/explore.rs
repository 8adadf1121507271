//! Exhaustive exploration of one height of the round-based BFT rules.
//!
//! The model is the usual message-pool abstraction: every message an
//! honest validator sends goes into a global pool, and an honest validator
//! may fire a rule as soon as the pool holds the messages the rule needs.
//! Since a real validator can only act on messages that were sent, every
//! asynchronous schedule of the engine (including losses, which are just
//! infinite delays) is one of the explored behaviours. Byzantine
//! validators are assumed to have sent every possible message: any
//! proposal when they lead, and any prevote or precommit, counted towards
//! whatever threshold a receiver checks. Honest leaders without a valid
//! value may propose either value. Timeouts fire at any moment their rule
//! allows.
//!
//! Rounds are bounded; states are stored exactly, so the search is
//! complete for the bound.

use std::collections::{BTreeSet, HashSet};

use super::rules::{leader_for, Quorum, Round};
use crate::ids::NodeId;

/// The two candidate blocks.
pub const VALUES: [u8; 2] = [0, 1];

#[derive(Clone, Debug)]
pub struct ExploreConfig {
    pub n: usize,
    pub byzantine: BTreeSet<NodeId>,
    pub rounds: Round,
    /// Give up after this many distinct states.
    pub max_states: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExploreReport {
    pub states: usize,
    /// The bounded state space was covered entirely.
    pub complete: bool,
    /// Some explored state lets a validator decide.
    pub decides: bool,
    /// Two decisions the pool supports at once: (round, value) each.
    pub conflict: Option<[(Round, u8); 2]>,
}

const PROPOSE: u8 = 0;
const PREVOTE: u8 = 1;
const PRECOMMIT: u8 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct Local {
    round: u8,
    step: u8,
    locked: Option<(u8, u8)>,
    valid: Option<(u8, u8)>,
    /// The lock-or-update rule already fired in the current round.
    updated: bool,
}

/// What honest validators have sent in one round. Who sent a vote does not
/// matter to any rule, only how many sent each value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
struct Pool {
    proposal: Option<(u8, Option<u8>)>,
    /// Counts for nil, value 0, value 1.
    prevotes: [u8; 3],
    precommits: [u8; 3],
    leader_prevoted: bool,
}

fn slot(value: Option<u8>) -> usize {
    match value {
        None => 0,
        Some(v) => v as usize + 1,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct State {
    local: Vec<Local>,
    pool: Vec<Pool>,
}

/// Append-only bit packer for state fingerprints that are exact.
struct Packer {
    bits: u128,
    used: u32,
}

impl Packer {
    fn push(&mut self, value: u32, width: u32) {
        debug_assert!(value < (1 << width));
        self.bits |= (value as u128) << self.used;
        self.used += width;
        assert!(self.used <= 128, "state does not fit the packed encoding");
    }

    fn opt_pair(&mut self, p: Option<(u8, u8)>, rbits: u32) {
        match p {
            None => self.push(0, 1 + 1 + rbits),
            Some((v, r)) => self.push(1 | (v as u32) << 1 | (r as u32) << 2, 2 + rbits),
        }
    }
}

struct Model {
    validators: Vec<NodeId>,
    honest: Vec<NodeId>,
    byz: usize,
    rounds: u8,
    quorum: Quorum,
}

impl Model {
    fn h(&self) -> usize {
        self.honest.len()
    }

    fn leader_index(&self, round: u8) -> Option<usize> {
        let l = leader_for(0, round as Round, &self.validators);
        self.honest.iter().position(|n| *n == l)
    }

    /// Whether honest node `i` leads some round after `round`.
    fn leads_later(&self, i: usize, round: u8) -> bool {
        (round + 1..self.rounds).any(|r| self.leader_index(r) == Some(i))
    }

    fn prevotes_for(&self, s: &State, round: u8, value: Option<u8>) -> usize {
        s.pool[round as usize].prevotes[slot(value)] as usize + self.byz
    }

    fn precommits_for(&self, s: &State, round: u8, value: Option<u8>) -> usize {
        s.pool[round as usize].precommits[slot(value)] as usize + self.byz
    }

    fn any_prevotes(&self, s: &State, round: u8) -> usize {
        s.pool[round as usize].prevotes.iter().map(|c| *c as usize).sum::<usize>() + self.byz
    }

    fn any_precommits(&self, s: &State, round: u8) -> usize {
        s.pool[round as usize].precommits.iter().map(|c| *c as usize).sum::<usize>() + self.byz
    }

    /// Validators known to have sent something in `round`. A precommit is
    /// always preceded by a prevote of the same round.
    fn senders(&self, s: &State, round: u8) -> usize {
        let p = &s.pool[round as usize];
        let mut n = p.prevotes.iter().map(|c| *c as usize).sum::<usize>();
        if p.proposal.is_some() && !p.leader_prevoted {
            n += 1;
        }
        n + self.byz
    }

    /// Proposals for `round` present in the pool.
    fn proposals(&self, s: &State, round: u8) -> Vec<(u8, Option<u8>)> {
        if self.leader_index(round).is_none() {
            let mut out = Vec::new();
            for v in VALUES {
                out.push((v, None));
                for vr in 0..round {
                    out.push((v, Some(vr)));
                }
            }
            out
        } else {
            s.pool[round as usize].proposal.into_iter().collect()
        }
    }

    fn vote(&self, s: &mut State, i: usize, step: u8, value: Option<u8>) {
        let r = s.local[i].round;
        let p = &mut s.pool[r as usize];
        if step == PREVOTE {
            p.prevotes[slot(value)] += 1;
            if self.leader_index(r) == Some(i) {
                p.leader_prevoted = true;
            }
        } else {
            p.precommits[slot(value)] += 1;
        }
        s.local[i].step = step;
    }

    /// Enter `round`; a leader without a valid value branches on both.
    fn start_round(&self, s: &State, i: usize, round: u8) -> Vec<State> {
        let mut base = s.clone();
        base.local[i].round = round;
        base.local[i].step = PROPOSE;
        base.local[i].updated = false;
        if self.leader_index(round) != Some(i) {
            return vec![base];
        }
        match base.local[i].valid {
            Some((v, vr)) => {
                base.pool[round as usize].proposal = Some((v, Some(vr)));
                vec![base]
            }
            None => VALUES
                .iter()
                .map(|v| {
                    let mut b = base.clone();
                    b.pool[round as usize].proposal = Some((*v, None));
                    b
                })
                .collect(),
        }
    }

    fn successors(&self, s: &State) -> Vec<State> {
        let q = self.quorum.threshold();
        let mut out = Vec::new();
        for i in 0..self.h() {
            let me = s.local[i];
            let r = me.round;

            if me.step == PROPOSE {
                for (v, vr) in self.proposals(s, r) {
                    let accept = match vr {
                        None => me.locked.is_none_or(|(lv, _)| lv == v),
                        Some(vr) => {
                            if self.prevotes_for(s, vr, Some(v)) < q {
                                continue;
                            }
                            me.locked.is_none_or(|(lv, lr)| lr <= vr || lv == v)
                        }
                    };
                    let mut n = s.clone();
                    self.vote(&mut n, i, PREVOTE, accept.then_some(v));
                    out.push(n);
                }
                // Propose timeout.
                let mut n = s.clone();
                self.vote(&mut n, i, PREVOTE, None);
                out.push(n);
            }

            if me.step != PROPOSE && !me.updated {
                for (v, _) in self.proposals(s, r) {
                    if self.prevotes_for(s, r, Some(v)) >= q {
                        let mut n = s.clone();
                        if me.step == PREVOTE {
                            n.local[i].locked = Some((v, r));
                            self.vote(&mut n, i, PRECOMMIT, Some(v));
                        }
                        n.local[i].valid = Some((v, r));
                        n.local[i].updated = true;
                        out.push(n);
                    }
                }
            }

            if me.step == PREVOTE && self.any_prevotes(s, r) >= q {
                // Nil quorum, or the prevote timeout after any quorum.
                let mut n = s.clone();
                self.vote(&mut n, i, PRECOMMIT, None);
                out.push(n);
            }

            // Precommit timeout.
            if self.any_precommits(s, r) >= q && r + 1 < self.rounds {
                out.extend(self.start_round(s, i, r + 1));
            }

            // Round skip.
            for later in r + 1..self.rounds {
                if self.senders(s, later) >= self.quorum.skip() {
                    out.extend(self.start_round(s, i, later));
                }
            }
        }
        out
    }

    /// Decisions the pool supports: a proposal plus a precommit quorum.
    fn decidable(&self, s: &State) -> Vec<(Round, u8)> {
        let q = self.quorum.threshold();
        let mut out = Vec::new();
        for r in 0..self.rounds {
            let mut values: Vec<u8> = self.proposals(s, r).into_iter().map(|(v, _)| v).collect();
            values.dedup();
            for v in values {
                if self.precommits_for(s, r, Some(v)) >= q {
                    out.push((r as Round, v));
                }
            }
        }
        out
    }

    fn conflict(&self, s: &State) -> Option<[(Round, u8); 2]> {
        let d = self.decidable(s);
        let first = *d.first()?;
        d.iter().find(|(_, v)| *v != first.1).map(|b| [first, *b])
    }

    /// Exact packed key, canonical under swapping the two values. Valid
    /// values of nodes that never lead again are dropped: only a leader
    /// reads them.
    fn key(&self, s: &State) -> u128 {
        let swap = |v: u8| 1 - v;
        let pack = |flip: bool| {
            let f = |v: u8| if flip { swap(v) } else { v };
            let rbits = 32 - (self.rounds as u32).leading_zeros();
            let cbits = 32 - (self.h() as u32).leading_zeros();
            let mut p = Packer { bits: 0, used: 0 };
            for (i, l) in s.local.iter().enumerate() {
                p.push(l.round as u32, rbits);
                p.push(l.step as u32, 2);
                p.opt_pair(l.locked.map(|(v, r)| (f(v), r)), rbits);
                let valid = if self.leads_later(i, l.round) { l.valid } else { None };
                p.opt_pair(valid.map(|(v, r)| (f(v), r)), rbits);
                p.push(l.updated as u32, 1);
            }
            for pool in &s.pool {
                match pool.proposal {
                    None => p.push(0, 3 + rbits),
                    Some((v, vr)) => {
                        p.push(1, 1);
                        p.push(f(v) as u32, 1);
                        match vr {
                            None => p.push(0, 1 + rbits),
                            Some(r) => p.push(1 | (r as u32) << 1, 1 + rbits),
                        }
                    }
                }
                let order = if flip { [0, 2, 1] } else { [0, 1, 2] };
                for k in order {
                    p.push(pool.prevotes[k] as u32, cbits);
                }
                for k in order {
                    p.push(pool.precommits[k] as u32, cbits);
                }
                p.push(pool.leader_prevoted as u32, 1);
            }
            p.bits
        };
        pack(false).min(pack(true))
    }
}

pub fn explore(cfg: &ExploreConfig) -> ExploreReport {
    let validators: Vec<NodeId> = (0..cfg.n as u32).map(NodeId).collect();
    let honest: Vec<NodeId> = validators
        .iter()
        .copied()
        .filter(|v| !cfg.byzantine.contains(v))
        .collect();
    let rounds = cfg.rounds.min(u8::MAX as Round) as u8;
    let model = Model {
        byz: validators.len() - honest.len(),
        validators,
        honest,
        rounds,
        quorum: Quorum::byzantine(cfg.n),
    };
    let idle = Local {
        round: 0,
        step: PROPOSE,
        locked: None,
        valid: None,
        updated: false,
    };
    let start = State {
        local: vec![idle; model.h()],
        pool: vec![Pool::default(); rounds as usize],
    };
    let init = match model.leader_index(0) {
        Some(l) => model.start_round(&start, l, 0),
        None => vec![start],
    };

    let mut seen: HashSet<u128> = init.iter().map(|s| model.key(s)).collect();
    let mut stack = init;
    let mut decides = false;
    while let Some(s) = stack.pop() {
        decides = decides || !model.decidable(&s).is_empty();
        if let Some(c) = model.conflict(&s) {
            return ExploreReport {
                states: seen.len(),
                decides,
                complete: false,
                conflict: Some(c),
            };
        }
        for next in model.successors(&s) {
            if seen.len() >= cfg.max_states {
                return ExploreReport {
                    states: seen.len(),
                    decides,
                    complete: false,
                    conflict: None,
                };
            }
            if seen.insert(model.key(&next)) {
                stack.push(next);
            }
        }
    }
    ExploreReport {
        states: seen.len(),
        decides,
        complete: true,
        conflict: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_honest_single_round_never_conflicts() {
        let r = explore(&ExploreConfig {
            n: 4,
            byzantine: BTreeSet::new(),
            rounds: 1,
            max_states: 1_000_000,
        });
        assert!(r.complete && r.decides && r.conflict.is_none());
    }
}
