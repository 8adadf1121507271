//! Round-based BFT agreement for a single height.
//!
//! A direct encoding of the propose/prevote/precommit rule set with
//! locking, valid-value tracking, round skipping and three timeouts. The
//! value type is generic so the replica (block ids) and the exhaustive
//! explorer (small integers) drive the same code.

use std::collections::{BTreeMap, BTreeSet};

use crate::ids::NodeId;

pub type Round = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Step {
    Propose,
    Prevote,
    Precommit,
}

/// Validator set size and fault bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Quorum {
    pub n: usize,
    pub f: usize,
}

impl Quorum {
    /// Byzantine bound: `f = (n-1)/3`.
    pub fn byzantine(n: usize) -> Self {
        Self { n, f: n.saturating_sub(1) / 3 }
    }

    /// Crash-only bound: `f = (n-1)/2`.
    pub fn crash(n: usize) -> Self {
        Self { n, f: n.saturating_sub(1) / 2 }
    }

    /// Votes needed to lock or decide. Equals `2f+1` when `n = 3f+1`.
    pub fn threshold(&self) -> usize {
        self.n - self.f
    }

    /// Messages from a later round that prove some correct node is there.
    pub fn skip(&self) -> usize {
        self.f + 1
    }
}

/// Rotating leader: `validators[(height + round) mod n]`.
pub fn leader_for(height: u64, round: Round, validators: &[NodeId]) -> NodeId {
    validators[((height + round as u64) % validators.len() as u64) as usize]
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Vote<V> {
    Prevote { round: Round, value: Option<V> },
    Precommit { round: Round, value: Option<V> },
}

impl<V> Vote<V> {
    pub fn round(&self) -> Round {
        match self {
            Vote::Prevote { round, .. } | Vote::Precommit { round, .. } => *round,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action<V> {
    Propose {
        round: Round,
        value: V,
        valid_round: Option<Round>,
    },
    Vote(Vote<V>),
    Timeout { step: Step, round: Round },
    Decide { round: Round, value: V },
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct Proposal<V> {
    value: V,
    valid_round: Option<Round>,
    valid: bool,
}

/// Per-height agreement state of one validator.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RoundState<V> {
    pub height: u64,
    me: NodeId,
    validators: Vec<NodeId>,
    quorum: Quorum,
    pub round: Round,
    pub step: Step,
    pub locked: Option<(V, Round)>,
    pub valid: Option<(V, Round)>,
    pub decision: Option<V>,
    proposals: BTreeMap<Round, Proposal<V>>,
    prevotes: BTreeMap<Round, BTreeMap<NodeId, Option<V>>>,
    precommits: BTreeMap<Round, BTreeMap<NodeId, Option<V>>>,
    /// Rounds for which a one-shot rule has fired.
    prevote_timeout_set: BTreeSet<Round>,
    precommit_timeout_set: BTreeSet<Round>,
    locked_on_proposal: BTreeSet<Round>,
    started: bool,
}

impl<V: Clone + Ord> RoundState<V> {
    pub fn new(height: u64, me: NodeId, validators: Vec<NodeId>, quorum: Quorum) -> Self {
        Self {
            height,
            me,
            validators,
            quorum,
            round: 0,
            step: Step::Propose,
            locked: None,
            valid: None,
            decision: None,
            proposals: BTreeMap::new(),
            prevotes: BTreeMap::new(),
            precommits: BTreeMap::new(),
            prevote_timeout_set: BTreeSet::new(),
            precommit_timeout_set: BTreeSet::new(),
            locked_on_proposal: BTreeSet::new(),
            started: false,
        }
    }

    pub fn started(&self) -> bool {
        self.started
    }

    pub fn leader(&self, round: Round) -> NodeId {
        leader_for(self.height, round, &self.validators)
    }

    pub fn is_validator(&self, node: NodeId) -> bool {
        self.validators.contains(&node)
    }

    /// Enter `round`. The leader proposes its valid value, or a fresh one
    /// from `fresh`.
    pub fn start_round(&mut self, round: Round, fresh: impl FnOnce() -> V) -> Vec<Action<V>> {
        self.started = true;
        self.round = round;
        self.step = Step::Propose;
        let mut out = Vec::new();
        if self.leader(round) == self.me {
            let (value, valid_round) = match &self.valid {
                Some((v, r)) => (v.clone(), Some(*r)),
                None => (fresh(), None),
            };
            out.push(Action::Propose {
                round,
                value,
                valid_round,
            });
        } else {
            out.push(Action::Timeout {
                step: Step::Propose,
                round,
            });
        }
        out
    }

    /// Record a proposal. `valid` is the application's verdict on the value.
    /// Returns false if ignored.
    pub fn on_proposal(
        &mut self,
        from: NodeId,
        round: Round,
        value: V,
        valid_round: Option<Round>,
        valid: bool,
    ) -> bool {
        if from != self.leader(round) || self.proposals.contains_key(&round) {
            return false;
        }
        if valid_round.is_some_and(|vr| vr >= round) {
            return false;
        }
        self.proposals.insert(
            round,
            Proposal {
                value,
                valid_round,
                valid,
            },
        );
        true
    }

    /// Record a vote; duplicates and non-validators are discarded.
    pub fn on_vote(&mut self, from: NodeId, vote: Vote<V>) -> bool {
        if !self.is_validator(from) {
            return false;
        }
        let (book, round, value) = match vote {
            Vote::Prevote { round, value } => (&mut self.prevotes, round, value),
            Vote::Precommit { round, value } => (&mut self.precommits, round, value),
        };
        let votes = book.entry(round).or_default();
        if votes.contains_key(&from) {
            return false;
        }
        votes.insert(from, value);
        true
    }

    fn count(book: &BTreeMap<Round, BTreeMap<NodeId, Option<V>>>, round: Round, value: Option<&V>) -> usize {
        book.get(&round)
            .map(|m| m.values().filter(|v| v.as_ref() == value).count())
            .unwrap_or(0)
    }

    fn total(book: &BTreeMap<Round, BTreeMap<NodeId, Option<V>>>, round: Round) -> usize {
        book.get(&round).map(|m| m.len()).unwrap_or(0)
    }

    /// Senders of any message for `round`.
    fn senders(&self, round: Round) -> BTreeSet<NodeId> {
        let mut s: BTreeSet<NodeId> = BTreeSet::new();
        for book in [&self.prevotes, &self.precommits] {
            if let Some(m) = book.get(&round) {
                s.extend(m.keys().copied());
            }
        }
        if self.proposals.contains_key(&round) {
            s.insert(self.leader(round));
        }
        s
    }

    fn vote(&mut self, step: Step, value: Option<V>, out: &mut Vec<Action<V>>) {
        let round = self.round;
        let vote = match step {
            Step::Prevote => Vote::Prevote { round, value },
            Step::Precommit => Vote::Precommit { round, value },
            Step::Propose => unreachable!("no vote in the propose step"),
        };
        self.step = step;
        out.push(Action::Vote(vote));
    }

    /// Apply every enabled rule until none fires. `fresh` supplies a value
    /// if a round skip makes this node leader.
    pub fn evaluate(&mut self, mut fresh: impl FnMut() -> V) -> Vec<Action<V>> {
        let mut out = Vec::new();
        if !self.started {
            return out;
        }
        loop {
            let before = out.len();
            self.step_rules(&mut out);
            if self.decision.is_none() {
                // Round skip: f+1 senders in a later round.
                let later = self
                    .prevotes
                    .keys()
                    .chain(self.precommits.keys())
                    .chain(self.proposals.keys())
                    .copied()
                    .filter(|r| *r > self.round)
                    .collect::<BTreeSet<Round>>();
                if let Some(r) = later.into_iter().find(|r| self.senders(*r).len() >= self.quorum.skip()) {
                    out.extend(self.start_round(r, &mut fresh));
                }
            }
            if out.len() == before {
                return out;
            }
        }
    }

    fn step_rules(&mut self, out: &mut Vec<Action<V>>) {
        let q = self.quorum.threshold();
        let r = self.round;

        // Decide on a quorum of precommits for a proposed value, any round.
        if self.decision.is_none() {
            let decided = self.proposals.iter().find(|(pr, p)| {
                p.valid && Self::count(&self.precommits, **pr, Some(&p.value)) >= q
            });
            if let Some((pr, p)) = decided {
                let value = p.value.clone();
                let round = *pr;
                self.decision = Some(value.clone());
                out.push(Action::Decide { round, value });
                return;
            }
        } else {
            return;
        }

        if self.step == Step::Propose {
            if let Some(p) = self.proposals.get(&r).cloned() {
                match p.valid_round {
                    None => {
                        let ok = p.valid
                            && match &self.locked {
                                None => true,
                                Some((lv, _)) => *lv == p.value,
                            };
                        self.vote(Step::Prevote, ok.then_some(p.value), out);
                        return;
                    }
                    Some(vr) => {
                        if Self::count(&self.prevotes, vr, Some(&p.value)) >= q {
                            let ok = p.valid
                                && match &self.locked {
                                    None => true,
                                    Some((lv, lr)) => *lr <= vr || *lv == p.value,
                                };
                            self.vote(Step::Prevote, ok.then_some(p.value), out);
                            return;
                        }
                    }
                }
            }
        }

        if self.step == Step::Prevote
            && Self::total(&self.prevotes, r) >= q
            && self.prevote_timeout_set.insert(r)
        {
            out.push(Action::Timeout {
                step: Step::Prevote,
                round: r,
            });
        }

        if self.step != Step::Propose && !self.locked_on_proposal.contains(&r) {
            if let Some(p) = self.proposals.get(&r).cloned() {
                if p.valid && Self::count(&self.prevotes, r, Some(&p.value)) >= q {
                    self.locked_on_proposal.insert(r);
                    if self.step == Step::Prevote {
                        self.locked = Some((p.value.clone(), r));
                        self.vote(Step::Precommit, Some(p.value.clone()), out);
                    }
                    self.valid = Some((p.value, r));
                    return;
                }
            }
        }

        if self.step == Step::Prevote && Self::count(&self.prevotes, r, None) >= q {
            self.vote(Step::Precommit, None, out);
            return;
        }

        if Self::total(&self.precommits, r) >= q && self.precommit_timeout_set.insert(r) {
            out.push(Action::Timeout {
                step: Step::Precommit,
                round: r,
            });
        }
    }

    /// Handle an expired timeout. Returns the resulting actions.
    pub fn on_timeout(&mut self, step: Step, round: Round, fresh: impl FnOnce() -> V) -> Vec<Action<V>> {
        let mut out = Vec::new();
        if self.decision.is_some() || round != self.round {
            return out;
        }
        match step {
            Step::Propose if self.step == Step::Propose => self.vote(Step::Prevote, None, &mut out),
            Step::Prevote if self.step == Step::Prevote => self.vote(Step::Precommit, None, &mut out),
            Step::Precommit => out.extend(self.start_round(round + 1, fresh)),
            _ => {}
        }
        out
    }

    /// Precommit signers for `value` in `round`, used as a decision
    /// certificate.
    pub fn precommit_signers(&self, round: Round, value: &V) -> BTreeSet<NodeId> {
        self.precommits
            .get(&round)
            .map(|m| {
                m.iter()
                    .filter(|(_, v)| v.as_ref() == Some(value))
                    .map(|(n, _)| *n)
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn quorum(&self) -> Quorum {
        self.quorum
    }
}
