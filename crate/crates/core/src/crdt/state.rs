use std::fmt;

use super::{AWSet, CrdtError, Element, GCounter, GMap, Lattice};
use crate::encoding::{put_tag, ActorId, Encode, TAG_LEN};
use crate::workflow::{TaskIndex, Workflow};

const TAG_PAIR: u8 = 0x04;

/// Any CRDT state the runtime can store and disseminate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LatticeState {
    GCounter(GCounter),
    AWSet(AWSet),
    GMap(GMap),
    Pair(Box<Pair>),
    Workflow(Workflow),
}

/// A state fragment produced by a delta-mutator. Deltas are ordinary states
/// and join like them.
pub type Delta = LatticeState;

/// The shape of a [`LatticeState`]. Two states can be joined iff their
/// variants are equal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Variant {
    GCounter,
    AWSet,
    GMap,
    Pair(Box<Variant>, Box<Variant>),
    /// A workflow with the given number of tasks.
    Workflow(usize),
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::GCounter => f.write_str("GCounter"),
            Variant::AWSet => f.write_str("AWSet"),
            Variant::GMap => f.write_str("GMap"),
            Variant::Pair(a, b) => write!(f, "Pair<{a}, {b}>"),
            Variant::Workflow(n) => write!(f, "Workflow[{n}]"),
        }
    }
}

impl Variant {
    pub fn bottom(&self) -> LatticeState {
        match self {
            Variant::GCounter => LatticeState::GCounter(GCounter::new()),
            Variant::AWSet => LatticeState::AWSet(AWSet::new()),
            Variant::GMap => LatticeState::GMap(GMap::new()),
            Variant::Pair(a, b) => LatticeState::Pair(Box::new(Pair::new(a.bottom(), b.bottom()))),
            Variant::Workflow(n) => LatticeState::Workflow(
                Workflow::new(*n).expect("workflow variants have at least one task"),
            ),
        }
    }
}

/// Componentwise product of two lattices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pair {
    first: LatticeState,
    second: LatticeState,
}

impl Pair {
    pub fn new(first: LatticeState, second: LatticeState) -> Self {
        Self { first, second }
    }

    pub fn first(&self) -> &LatticeState {
        &self.first
    }

    pub fn second(&self) -> &LatticeState {
        &self.second
    }
}

/// A state-changing operation, dispatched to the matching variant's mutator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Mutation {
    Increment { actor: ActorId, amount: u64 },
    Add { actor: ActorId, element: Element },
    Remove { element: Element },
    SetTrue { key: ActorId },
    MarkComplete { task: TaskIndex, node: ActorId },
    First(Box<Mutation>),
    Second(Box<Mutation>),
}

impl Mutation {
    fn name(&self) -> &'static str {
        match self {
            Mutation::Increment { .. } => "increment",
            Mutation::Add { .. } => "add",
            Mutation::Remove { .. } => "remove",
            Mutation::SetTrue { .. } => "set_true",
            Mutation::MarkComplete { .. } => "mark_complete",
            Mutation::First(_) => "first",
            Mutation::Second(_) => "second",
        }
    }
}

impl LatticeState {
    pub fn variant(&self) -> Variant {
        match self {
            LatticeState::GCounter(_) => Variant::GCounter,
            LatticeState::AWSet(_) => Variant::AWSet,
            LatticeState::GMap(_) => Variant::GMap,
            LatticeState::Pair(p) => {
                Variant::Pair(Box::new(p.first.variant()), Box::new(p.second.variant()))
            }
            LatticeState::Workflow(w) => Variant::Workflow(w.task_count()),
        }
    }

    fn check_compatible(&self, other: &Self) -> Result<(), CrdtError> {
        let (left, right) = (self.variant(), other.variant());
        if left == right {
            Ok(())
        } else {
            Err(CrdtError::VariantMismatch {
                left: left.to_string(),
                right: right.to_string(),
            })
        }
    }

    pub fn join(&self, other: &Self) -> Result<Self, CrdtError> {
        let mut out = self.clone();
        out.join_assign(other)?;
        Ok(out)
    }

    /// Joins `other` into `self`; returns whether `self` changed.
    pub fn join_assign(&mut self, other: &Self) -> Result<bool, CrdtError> {
        self.check_compatible(other)?;
        Ok(self.join_unchecked(other))
    }

    fn join_unchecked(&mut self, other: &Self) -> bool {
        match (self, other) {
            (LatticeState::GCounter(a), LatticeState::GCounter(b)) => a.join_assign(b),
            (LatticeState::AWSet(a), LatticeState::AWSet(b)) => a.join_assign(b),
            (LatticeState::GMap(a), LatticeState::GMap(b)) => a.join_assign(b),
            (LatticeState::Workflow(a), LatticeState::Workflow(b)) => a.join_assign(b),
            (LatticeState::Pair(a), LatticeState::Pair(b)) => {
                let first = a.first.join_unchecked(&b.first);
                let second = a.second.join_unchecked(&b.second);
                first || second
            }
            _ => unreachable!("variants checked before joining"),
        }
    }

    pub fn is_bottom(&self) -> bool {
        match self {
            LatticeState::GCounter(s) => s.is_bottom(),
            LatticeState::AWSet(s) => s.is_bottom(),
            LatticeState::GMap(s) => s.is_bottom(),
            LatticeState::Pair(p) => p.first.is_bottom() && p.second.is_bottom(),
            LatticeState::Workflow(s) => s.is_bottom(),
        }
    }

    /// Applies `mutation`, returning the inflated state and its delta.
    pub fn apply(&self, mutation: &Mutation) -> Result<(LatticeState, Delta), CrdtError> {
        use LatticeState as S;
        match (self, mutation) {
            (S::GCounter(c), Mutation::Increment { actor, amount }) => {
                let (next, delta) = c.increment(actor, *amount)?;
                Ok((S::GCounter(next), S::GCounter(delta)))
            }
            (S::AWSet(s), Mutation::Add { actor, element }) => {
                let (next, delta) = s.add(actor, element.clone());
                Ok((S::AWSet(next), S::AWSet(delta)))
            }
            (S::AWSet(s), Mutation::Remove { element }) => {
                let (next, delta) = s.remove(element);
                Ok((S::AWSet(next), S::AWSet(delta)))
            }
            (S::GMap(m), Mutation::SetTrue { key }) => {
                let (next, delta) = m.set_true(key);
                Ok((S::GMap(next), S::GMap(delta)))
            }
            (S::Workflow(w), Mutation::MarkComplete { task, node }) => {
                let (next, delta) = w.mark_complete(*task, node)?;
                Ok((S::Workflow(next), S::Workflow(delta)))
            }
            (S::Pair(p), Mutation::First(inner)) => {
                let (first, delta) = p.first.apply(inner)?;
                let bottom = p.second.variant().bottom();
                Ok((
                    S::Pair(Box::new(Pair::new(first, p.second.clone()))),
                    S::Pair(Box::new(Pair::new(delta, bottom))),
                ))
            }
            (S::Pair(p), Mutation::Second(inner)) => {
                let (second, delta) = p.second.apply(inner)?;
                let bottom = p.first.variant().bottom();
                Ok((
                    S::Pair(Box::new(Pair::new(p.first.clone(), second))),
                    S::Pair(Box::new(Pair::new(bottom, delta))),
                ))
            }
            (state, m) => Err(CrdtError::MutationMismatch {
                mutation: m.name(),
                variant: state.variant().to_string(),
            }),
        }
    }

    pub fn as_gcounter(&self) -> Option<&GCounter> {
        match self {
            LatticeState::GCounter(c) => Some(c),
            _ => None,
        }
    }

    pub fn as_awset(&self) -> Option<&AWSet> {
        match self {
            LatticeState::AWSet(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_gmap(&self) -> Option<&GMap> {
        match self {
            LatticeState::GMap(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_workflow(&self) -> Option<&Workflow> {
        match self {
            LatticeState::Workflow(w) => Some(w),
            _ => None,
        }
    }
}

impl Encode for LatticeState {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            LatticeState::GCounter(s) => s.encode(out),
            LatticeState::AWSet(s) => s.encode(out),
            LatticeState::GMap(s) => s.encode(out),
            LatticeState::Workflow(s) => s.encode(out),
            LatticeState::Pair(p) => {
                put_tag(out, TAG_PAIR);
                p.first.encode(out);
                p.second.encode(out);
            }
        }
    }

    fn encoded_len(&self) -> usize {
        match self {
            LatticeState::GCounter(s) => s.encoded_len(),
            LatticeState::AWSet(s) => s.encoded_len(),
            LatticeState::GMap(s) => s.encoded_len(),
            LatticeState::Workflow(s) => s.encoded_len(),
            LatticeState::Pair(p) => TAG_LEN + p.first.encoded_len() + p.second.encoded_len(),
        }
    }
}
