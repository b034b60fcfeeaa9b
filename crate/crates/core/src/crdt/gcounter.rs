use std::collections::BTreeMap;

use super::{CrdtError, Lattice};
use crate::encoding::{put_count, put_tag, put_u64, ActorId, Encode};
use crate::encoding::{COUNT_LEN, INT_LEN, TAG_LEN};

pub(crate) const TAG_GCOUNTER: u8 = 0x01;

/// Grow-only counter: one monotone count per actor, value is their sum.
///
/// Zero counts are never stored, so an absent actor and a zero entry are
/// the same state.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GCounter {
    entries: BTreeMap<ActorId, u64>,
}

impl GCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self) -> u64 {
        self.entries.values().sum()
    }

    /// The count contributed by `actor`.
    pub fn get(&self, actor: &ActorId) -> u64 {
        self.entries.get(actor).copied().unwrap_or(0)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&ActorId, u64)> {
        self.entries.iter().map(|(a, n)| (a, *n))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds `amount` to `actor`'s entry, returning the new state and a delta
    /// holding only that entry.
    pub fn increment(
        &self,
        actor: &ActorId,
        amount: u64,
    ) -> Result<(GCounter, GCounter), CrdtError> {
        if amount == 0 {
            return Err(CrdtError::ZeroIncrement);
        }
        let count = self.get(actor).saturating_add(amount);
        let mut next = self.clone();
        next.entries.insert(actor.clone(), count);
        let delta = GCounter {
            entries: BTreeMap::from([(actor.clone(), count)]),
        };
        Ok((next, delta))
    }
}

impl Lattice for GCounter {
    fn join_assign(&mut self, other: &Self) -> bool {
        let mut changed = false;
        for (actor, &count) in &other.entries {
            match self.entries.get_mut(actor) {
                Some(mine) if *mine >= count => {}
                Some(mine) => {
                    *mine = count;
                    changed = true;
                }
                None => {
                    self.entries.insert(actor.clone(), count);
                    changed = true;
                }
            }
        }
        changed
    }

    fn is_bottom(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Encode for GCounter {
    fn encode(&self, out: &mut Vec<u8>) {
        put_tag(out, TAG_GCOUNTER);
        put_count(out, self.entries.len());
        for (actor, count) in &self.entries {
            actor.encode(out);
            put_u64(out, *count);
        }
    }

    fn encoded_len(&self) -> usize {
        TAG_LEN
            + COUNT_LEN
            + self
                .entries
                .keys()
                .map(|a| a.encoded_len() + INT_LEN)
                .sum::<usize>()
    }
}
