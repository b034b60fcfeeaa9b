use std::collections::BTreeMap;

use super::Lattice;
use crate::encoding::{put_count, put_tag, ActorId, Encode};
use crate::encoding::{COUNT_LEN, TAG_LEN};

pub(crate) const TAG_GMAP: u8 = 0x03;

/// Grow-only map from node identifiers to boolean flags.
///
/// Keys are never removed and flags only move from `false` to `true`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GMap {
    entries: BTreeMap<ActorId, bool>,
}

impl GMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn flag(&self, key: &ActorId) -> bool {
        self.entries.get(key).copied().unwrap_or(false)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&ActorId, bool)> {
        self.entries.iter().map(|(k, v)| (k, *v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn set_true(&self, key: &ActorId) -> (GMap, GMap) {
        let mut next = self.clone();
        next.entries.insert(key.clone(), true);
        let delta = GMap {
            entries: BTreeMap::from([(key.clone(), true)]),
        };
        (next, delta)
    }
}

impl Lattice for GMap {
    fn join_assign(&mut self, other: &Self) -> bool {
        let mut changed = false;
        for (key, &flag) in &other.entries {
            match self.entries.get_mut(key) {
                Some(mine) => {
                    if flag && !*mine {
                        *mine = true;
                        changed = true;
                    }
                }
                None => {
                    self.entries.insert(key.clone(), flag);
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

impl Encode for GMap {
    fn encode(&self, out: &mut Vec<u8>) {
        put_tag(out, TAG_GMAP);
        put_count(out, self.entries.len());
        for (key, flag) in &self.entries {
            key.encode(out);
            out.push(u8::from(*flag));
        }
    }

    fn encoded_len(&self) -> usize {
        TAG_LEN
            + COUNT_LEN
            + self
                .entries
                .keys()
                .map(|k| k.encoded_len() + 1)
                .sum::<usize>()
    }
}
