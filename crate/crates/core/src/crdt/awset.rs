//! Add-wins set built from a dot store and a causal context.
//!
//! Every insertion is tagged with a fresh [`Dot`]. A replica remembers every
//! dot it has seen in its [`CausalContext`]; an element is present while at
//! least one of its dots survives. Removal drops the element's dots from the
//! store but keeps them in the context, so no tombstones are needed: another
//! replica that still holds those dots loses them on join because they are
//! covered by our context, while dots we have never seen (a concurrent add)
//! survive.

use std::collections::{BTreeMap, BTreeSet};

use super::{Element, Lattice};
use crate::encoding::{put_count, put_tag, put_u64, ActorId, Encode};
use crate::encoding::{COUNT_LEN, INT_LEN, TAG_LEN};

pub(crate) const TAG_AWSET: u8 = 0x02;

/// A unique event tag: the `sequence`-th event issued by `actor`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Dot {
    pub actor: ActorId,
    pub sequence: u64,
}

impl Dot {
    pub fn new(actor: ActorId, sequence: u64) -> Self {
        debug_assert!(sequence > 0, "dot sequences start at 1");
        Self { actor, sequence }
    }
}

impl Encode for Dot {
    fn encode(&self, out: &mut Vec<u8>) {
        self.actor.encode(out);
        put_u64(out, self.sequence);
    }

    fn encoded_len(&self) -> usize {
        self.actor.encoded_len() + INT_LEN
    }
}

/// The set of dots a replica has observed.
///
/// Stored as a per-actor contiguous prefix `1..=max` plus a cloud of dots
/// beyond a gap. The representation is kept compact after every change,
/// which makes it canonical: equal dot sets have equal representations.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CausalContext {
    compact: BTreeMap<ActorId, u64>,
    cloud: BTreeSet<Dot>,
}

impl CausalContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.compact.is_empty() && self.cloud.is_empty()
    }

    pub fn contains(&self, dot: &Dot) -> bool {
        self.compact
            .get(&dot.actor)
            .is_some_and(|max| dot.sequence <= *max)
            || self.cloud.contains(dot)
    }

    /// Highest sequence seen for `actor`, including the cloud.
    pub fn max_sequence(&self, actor: &ActorId) -> u64 {
        let prefix = self.compact.get(actor).copied().unwrap_or(0);
        let cloud = self
            .cloud
            .range(Dot::new(actor.clone(), 1)..)
            .take_while(|d| &d.actor == actor)
            .last()
            .map_or(0, |d| d.sequence);
        prefix.max(cloud)
    }

    /// The next dot `actor` should issue.
    pub fn next_dot(&self, actor: &ActorId) -> Dot {
        Dot::new(actor.clone(), self.max_sequence(actor) + 1)
    }

    pub fn insert(&mut self, dot: Dot) {
        if !self.contains(&dot) {
            self.cloud.insert(dot);
            self.compact();
        }
    }

    pub fn union_with(&mut self, other: &CausalContext) {
        for (actor, max) in &other.compact {
            let mine = self.compact.entry(actor.clone()).or_insert(0);
            *mine = (*mine).max(*max);
        }
        self.cloud.extend(other.cloud.iter().cloned());
        self.compact();
    }

    /// Folds cloud dots that extend a contiguous prefix into it.
    fn compact(&mut self) {
        let cloud = std::mem::take(&mut self.cloud);
        for dot in cloud {
            let max = self.compact.get(&dot.actor).copied().unwrap_or(0);
            if dot.sequence <= max {
                continue;
            }
            if dot.sequence == max + 1 {
                self.compact.insert(dot.actor, dot.sequence);
            } else {
                self.cloud.insert(dot);
            }
        }
    }

    /// Number of explicitly stored entries (prefix actors plus cloud dots).
    pub fn metadata_len(&self) -> usize {
        self.compact.len() + self.cloud.len()
    }
}

impl Encode for CausalContext {
    fn encode(&self, out: &mut Vec<u8>) {
        put_count(out, self.compact.len());
        for (actor, max) in &self.compact {
            actor.encode(out);
            put_u64(out, *max);
        }
        put_count(out, self.cloud.len());
        for dot in &self.cloud {
            dot.encode(out);
        }
    }

    fn encoded_len(&self) -> usize {
        COUNT_LEN
            + self
                .compact
                .keys()
                .map(|a| a.encoded_len() + INT_LEN)
                .sum::<usize>()
            + COUNT_LEN
            + self.cloud.iter().map(Encode::encoded_len).sum::<usize>()
    }
}

/// Add-wins (observed-remove) set.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AWSet {
    entries: BTreeMap<Element, BTreeSet<Dot>>,
    context: CausalContext,
}

impl AWSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a set whose dots depend only on the elements themselves.
    ///
    /// Two replicas that compute the same membership independently produce
    /// identical states, which is what derived dataflow variables need.
    pub fn from_canonical(elements: impl IntoIterator<Item = Element>) -> Self {
        let actor = ActorId::new("~derived");
        let mut set = AWSet::new();
        for element in elements {
            let dot = Dot::new(actor.clone(), (element.fingerprint() >> 1) + 1);
            set.context.cloud.insert(dot.clone());
            set.entries.entry(element).or_default().insert(dot);
        }
        set.context.compact();
        set
    }

    pub fn contains(&self, element: &Element) -> bool {
        self.entries.contains_key(element)
    }

    /// Members in canonical order.
    pub fn elements(&self) -> impl Iterator<Item = &Element> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn context(&self) -> &CausalContext {
        &self.context
    }

    pub fn dots(&self, element: &Element) -> Option<&BTreeSet<Dot>> {
        self.entries.get(element)
    }

    /// Inserts `element` under a fresh dot for `actor`.
    ///
    /// The new dot replaces any dots the element already had; the delta
    /// carries the fresh dot plus those replaced dots in its context.
    pub fn add(&self, actor: &ActorId, element: Element) -> (AWSet, AWSet) {
        let dot = self.context.next_dot(actor);
        let mut delta = AWSet::new();
        if let Some(old) = self.entries.get(&element) {
            delta.context.cloud.extend(old.iter().cloned());
        }
        delta.context.cloud.insert(dot.clone());
        delta.context.compact();
        delta
            .entries
            .insert(element.clone(), BTreeSet::from([dot.clone()]));

        let mut next = self.clone();
        next.entries.insert(element, BTreeSet::from([dot.clone()]));
        next.context.insert(dot);
        (next, delta)
    }

    /// Removes every observed dot of `element`.
    ///
    /// The delta has no entries, only the removed dots in its context.
    /// Removing an absent element yields an unchanged state and a bottom delta.
    pub fn remove(&self, element: &Element) -> (AWSet, AWSet) {
        let mut next = self.clone();
        let mut delta = AWSet::new();
        if let Some(dots) = next.entries.remove(element) {
            delta.context.cloud.extend(dots);
            delta.context.compact();
        }
        (next, delta)
    }
}

impl Lattice for AWSet {
    fn join(&self, other: &Self) -> Self {
        let mut entries = BTreeMap::new();
        let keys: BTreeSet<&Element> = self.entries.keys().chain(other.entries.keys()).collect();
        let empty = BTreeSet::new();
        for key in keys {
            let mine = self.entries.get(key).unwrap_or(&empty);
            let theirs = other.entries.get(key).unwrap_or(&empty);
            let kept: BTreeSet<Dot> = mine
                .iter()
                .filter(|d| theirs.contains(d) || !other.context.contains(d))
                .chain(theirs.iter().filter(|d| !self.context.contains(d)))
                .cloned()
                .collect();
            if !kept.is_empty() {
                entries.insert(key.clone(), kept);
            }
        }
        let mut context = self.context.clone();
        context.union_with(&other.context);
        AWSet { entries, context }
    }

    fn join_assign(&mut self, other: &Self) -> bool {
        let joined = self.join(other);
        if joined == *self {
            false
        } else {
            *self = joined;
            true
        }
    }

    fn is_bottom(&self) -> bool {
        self.entries.is_empty() && self.context.is_empty()
    }
}

impl Encode for AWSet {
    fn encode(&self, out: &mut Vec<u8>) {
        put_tag(out, TAG_AWSET);
        put_count(out, self.entries.len());
        for (element, dots) in &self.entries {
            element.encode(out);
            put_count(out, dots.len());
            for dot in dots {
                dot.encode(out);
            }
        }
        self.context.encode(out);
    }

    fn encoded_len(&self) -> usize {
        TAG_LEN
            + COUNT_LEN
            + self
                .entries
                .iter()
                .map(|(e, dots)| {
                    e.encoded_len()
                        + COUNT_LEN
                        + dots.iter().map(Encode::encoded_len).sum::<usize>()
                })
                .sum::<usize>()
            + self.context.encoded_len()
    }
}
