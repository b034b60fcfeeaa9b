use std::collections::BTreeSet;

use log::debug;
use rand::seq::IteratorRandom;
use rand::Rng;

use super::{HpvMessage, HpvParams, OverlayError};
use crate::encoding::ActorId;

/// A message to send: destination and body.
pub type Outgoing = (ActorId, HpvMessage);

/// One node's active and passive peer sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MembershipView {
    owner: ActorId,
    params: HpvParams,
    active: BTreeSet<ActorId>,
    passive: BTreeSet<ActorId>,
}

impl MembershipView {
    pub fn new(owner: ActorId, params: HpvParams) -> Self {
        Self {
            owner,
            params,
            active: BTreeSet::new(),
            passive: BTreeSet::new(),
        }
    }

    /// A view with a fixed active set, used for the star where the server's
    /// active view must hold every client.
    pub fn fixed(owner: ActorId, active: BTreeSet<ActorId>) -> Self {
        let params = HpvParams {
            active_max: active.len().max(1),
            ..HpvParams::default()
        };
        Self {
            owner,
            params,
            active,
            passive: BTreeSet::new(),
        }
    }

    pub fn owner(&self) -> &ActorId {
        &self.owner
    }

    pub fn params(&self) -> &HpvParams {
        &self.params
    }

    pub fn active(&self) -> &BTreeSet<ActorId> {
        &self.active
    }

    pub fn passive(&self) -> &BTreeSet<ActorId> {
        &self.passive
    }

    pub fn is_isolated(&self) -> bool {
        self.active.is_empty()
    }

    /// Checks the view bounds and disjointness.
    pub fn invariants_hold(&self) -> bool {
        self.active.len() <= self.params.active_max
            && self.passive.len() <= self.params.passive_max
            && !self.active.contains(&self.owner)
            && !self.passive.contains(&self.owner)
            && self.active.is_disjoint(&self.passive)
    }

    /// Starts joining through `contact`. The contact is added to the active
    /// view right away; it adds us when the join arrives.
    pub fn join_via<R: Rng + ?Sized>(&mut self, contact: &ActorId, rng: &mut R) -> Vec<Outgoing> {
        if *contact == self.owner {
            return Vec::new();
        }
        let mut out = self.add_active(contact.clone(), rng);
        out.push((contact.clone(), HpvMessage::Join));
        out
    }

    /// Processes one message from `from` and returns the replies.
    pub fn handle<R: Rng + ?Sized>(
        &mut self,
        from: &ActorId,
        message: HpvMessage,
        rng: &mut R,
    ) -> Vec<Outgoing> {
        if *from == self.owner {
            return Vec::new();
        }
        match message {
            HpvMessage::Join => {
                let mut out = self.add_active(from.clone(), rng);
                let ttl = self.params.active_random_walk_length;
                for peer in self.active.iter().filter(|p| *p != from) {
                    out.push((
                        peer.clone(),
                        HpvMessage::ForwardJoin {
                            new_node: from.clone(),
                            ttl,
                        },
                    ));
                }
                out
            }
            HpvMessage::ForwardJoin { new_node, ttl } => {
                self.forward_join(from, new_node, ttl, rng)
            }
            HpvMessage::Neighbor { high_priority } => {
                let accepted = self.active.contains(from)
                    || high_priority
                    || self.active.len() < self.params.active_max;
                let mut out = Vec::new();
                if accepted {
                    out = self.add_active(from.clone(), rng);
                } else {
                    self.add_passive(from.clone(), rng);
                }
                out.push((from.clone(), HpvMessage::NeighborReply { accepted }));
                out
            }
            HpvMessage::NeighborReply { accepted } => {
                if !accepted || self.active.contains(from) {
                    return Vec::new();
                }
                // Filled up while the request was in flight: undo the link
                // rather than evicting someone else.
                if self.active.len() >= self.params.active_max {
                    self.add_passive(from.clone(), rng);
                    return vec![(from.clone(), HpvMessage::Disconnect)];
                }
                self.add_active(from.clone(), rng)
            }
            HpvMessage::Disconnect => {
                if !self.active.remove(from) {
                    return Vec::new();
                }
                self.add_passive(from.clone(), rng);
                if self.active.is_empty() {
                    self.request_neighbor(rng)
                } else {
                    Vec::new()
                }
            }
            HpvMessage::Shuffle {
                origin,
                ttl,
                sample,
            } => {
                if origin == self.owner {
                    return Vec::new();
                }
                if ttl > 0 && self.active.len() > 1 {
                    if let Some(next) = self.random_active_except(&[from, &origin], rng) {
                        return vec![(
                            next,
                            HpvMessage::Shuffle {
                                origin,
                                ttl: ttl - 1,
                                sample,
                            },
                        )];
                    }
                }
                let reply: Vec<ActorId> = self
                    .passive
                    .iter()
                    .cloned()
                    .choose_multiple(rng, sample.len());
                self.integrate(&sample, rng);
                vec![(origin, HpvMessage::ShuffleReply { sample: reply })]
            }
            HpvMessage::ShuffleReply { sample } => {
                self.integrate(&sample, rng);
                Vec::new()
            }
        }
    }

    /// Reacts to the loss of an active peer by asking a passive peer to
    /// take its place.
    pub fn on_failure<R: Rng + ?Sized>(&mut self, failed: &ActorId, rng: &mut R) -> Vec<Outgoing> {
        if !self.active.remove(failed) {
            return Vec::new();
        }
        self.passive.remove(failed);
        self.request_neighbor(rng)
    }

    /// If the active view is empty, joins again through a random member of
    /// `directory`.
    pub fn rejoin_if_isolated<R: Rng + ?Sized>(
        &mut self,
        directory: &BTreeSet<ActorId>,
        rng: &mut R,
    ) -> Result<Vec<Outgoing>, OverlayError> {
        if !self.active.is_empty() {
            return Ok(Vec::new());
        }
        let contact = directory
            .iter()
            .filter(|d| **d != self.owner)
            .choose(rng)
            .cloned()
            .ok_or_else(|| OverlayError::EmptyDirectory(self.owner.clone()))?;
        debug!("{} is isolated, rejoining via {contact}", self.owner);
        Ok(self.join_via(&contact, rng))
    }

    /// Starts a shuffle: a sample of ourselves and both views, sent on a
    /// random walk through the active view.
    pub fn shuffle<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<Outgoing> {
        let Some(target) = self.active.iter().choose(rng).cloned() else {
            return Vec::new();
        };
        let mut sample = vec![self.owner.clone()];
        sample.extend(
            self.active
                .iter()
                .filter(|p| **p != target)
                .cloned()
                .choose_multiple(rng, self.params.shuffle_active_sample),
        );
        sample.extend(
            self.passive
                .iter()
                .cloned()
                .choose_multiple(rng, self.params.shuffle_passive_sample),
        );
        vec![(
            target,
            HpvMessage::Shuffle {
                origin: self.owner.clone(),
                ttl: self.params.active_random_walk_length,
                sample,
            },
        )]
    }

    /// Tops up an undersized active view with one request to a passive peer.
    pub fn maintain<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<Outgoing> {
        if self.active.len() >= self.params.active_max {
            return Vec::new();
        }
        self.request_neighbor(rng)
    }

    fn forward_join<R: Rng + ?Sized>(
        &mut self,
        from: &ActorId,
        new_node: ActorId,
        ttl: u64,
        rng: &mut R,
    ) -> Vec<Outgoing> {
        if new_node == self.owner || self.active.contains(&new_node) {
            return Vec::new();
        }
        if ttl > 0 && self.active.len() > 1 {
            if ttl == self.params.passive_random_walk_length {
                self.add_passive(new_node.clone(), rng);
            }
            if let Some(next) = self.random_active_except(&[from, &new_node], rng) {
                return vec![(
                    next,
                    HpvMessage::ForwardJoin {
                        new_node,
                        ttl: ttl - 1,
                    },
                )];
            }
        }
        let mut out = self.add_active(new_node.clone(), rng);
        out.push((
            new_node,
            HpvMessage::Neighbor {
                high_priority: true,
            },
        ));
        out
    }

    fn request_neighbor<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<Outgoing> {
        match self.passive.iter().choose(rng) {
            Some(peer) => vec![(
                peer.clone(),
                HpvMessage::Neighbor {
                    high_priority: self.active.is_empty(),
                },
            )],
            None => Vec::new(),
        }
    }

    fn random_active_except<R: Rng + ?Sized>(
        &self,
        skip: &[&ActorId],
        rng: &mut R,
    ) -> Option<ActorId> {
        self.active
            .iter()
            .filter(|p| !skip.contains(p))
            .choose(rng)
            .cloned()
    }

    fn add_active<R: Rng + ?Sized>(&mut self, peer: ActorId, rng: &mut R) -> Vec<Outgoing> {
        if peer == self.owner || self.active.contains(&peer) {
            return Vec::new();
        }
        self.passive.remove(&peer);
        let mut out = Vec::new();
        if self.active.len() >= self.params.active_max {
            let victim = self
                .active
                .iter()
                .choose(rng)
                .cloned()
                .expect("a full active view is non-empty");
            self.active.remove(&victim);
            self.add_passive(victim.clone(), rng);
            out.push((victim, HpvMessage::Disconnect));
        }
        self.active.insert(peer);
        out
    }

    fn add_passive<R: Rng + ?Sized>(&mut self, peer: ActorId, rng: &mut R) {
        if peer == self.owner || self.active.contains(&peer) || self.passive.contains(&peer) {
            return;
        }
        if self.passive.len() >= self.params.passive_max {
            let evicted = self
                .passive
                .iter()
                .choose(rng)
                .cloned()
                .expect("a full passive view is non-empty");
            self.passive.remove(&evicted);
        }
        self.passive.insert(peer);
    }

    fn integrate<R: Rng + ?Sized>(&mut self, sample: &[ActorId], rng: &mut R) {
        for id in sample {
            self.add_passive(id.clone(), rng);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn id(s: &str) -> ActorId {
        ActorId::new(s)
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn join_at_empty_contact() {
        let mut r = rng();
        let mut contact = MembershipView::new(id("c"), HpvParams::default());
        let out = contact.handle(&id("j"), HpvMessage::Join, &mut r);
        assert!(out.is_empty());
        assert!(contact.active().contains(&id("j")));
    }

    #[test]
    fn join_when_full_evicts_one() {
        let mut r = rng();
        let params = HpvParams::default();
        let mut contact = MembershipView::new(id("c"), params.clone());
        for i in 0..params.active_max {
            contact.handle(&id(&format!("p{i}")), HpvMessage::Join, &mut r);
        }
        assert_eq!(contact.active().len(), params.active_max);
        let out = contact.handle(&id("new"), HpvMessage::Join, &mut r);
        assert_eq!(contact.active().len(), params.active_max);
        assert!(contact.active().contains(&id("new")));
        assert_eq!(contact.passive().len(), 1);
        let disconnects = out
            .iter()
            .filter(|(_, m)| *m == HpvMessage::Disconnect)
            .count();
        let forwards = out
            .iter()
            .filter(|(_, m)| matches!(m, HpvMessage::ForwardJoin { ttl: 6, .. }))
            .count();
        assert_eq!(disconnects, 1);
        assert_eq!(forwards, params.active_max - 1);
        assert!(contact.invariants_hold());
    }

    #[test]
    fn forward_join_accepts_at_ttl_zero() {
        let mut r = rng();
        let mut v = MembershipView::new(id("x"), HpvParams::default());
        for p in ["a", "b"] {
            v.handle(&id(p), HpvMessage::Join, &mut r);
        }
        let out = v.handle(
            &id("a"),
            HpvMessage::ForwardJoin {
                new_node: id("n"),
                ttl: 0,
            },
            &mut r,
        );
        assert!(v.active().contains(&id("n")));
        assert_eq!(
            out,
            vec![(
                id("n"),
                HpvMessage::Neighbor {
                    high_priority: true
                }
            )]
        );
    }

    #[test]
    fn forward_join_records_passive_at_prwl() {
        let mut r = rng();
        let mut v = MembershipView::new(id("x"), HpvParams::default());
        for p in ["a", "b", "c"] {
            v.handle(&id(p), HpvMessage::Join, &mut r);
        }
        let out = v.handle(
            &id("a"),
            HpvMessage::ForwardJoin {
                new_node: id("n"),
                ttl: 3,
            },
            &mut r,
        );
        assert!(v.passive().contains(&id("n")));
        assert_eq!(out.len(), 1);
        assert!(matches!(&out[0].1, HpvMessage::ForwardJoin { ttl: 2, .. }));
        assert_ne!(out[0].0, id("a"));
    }

    #[test]
    fn low_priority_neighbor_rejected_when_full() {
        let mut r = rng();
        let params = HpvParams {
            active_max: 1,
            ..HpvParams::default()
        };
        let mut v = MembershipView::new(id("x"), params);
        v.handle(&id("a"), HpvMessage::Join, &mut r);
        let out = v.handle(
            &id("b"),
            HpvMessage::Neighbor {
                high_priority: false,
            },
            &mut r,
        );
        assert_eq!(
            out,
            vec![(id("b"), HpvMessage::NeighborReply { accepted: false })]
        );
        assert!(v.passive().contains(&id("b")));
        let out = v.handle(
            &id("b"),
            HpvMessage::Neighbor {
                high_priority: true,
            },
            &mut r,
        );
        assert!(v.active().contains(&id("b")));
        assert!(out.contains(&(id("a"), HpvMessage::Disconnect)));
    }

    #[test]
    fn failure_requests_passive_peer() {
        let mut r = rng();
        let mut v = MembershipView::new(id("x"), HpvParams::default());
        v.handle(&id("a"), HpvMessage::Join, &mut r);
        assert!(v.on_failure(&id("a"), &mut r).is_empty());
        assert!(v.is_isolated());

        v.handle(&id("a"), HpvMessage::Join, &mut r);
        v.handle(
            &id("p"),
            HpvMessage::Neighbor {
                high_priority: false,
            },
            &mut r,
        );
        v.handle(&id("p"), HpvMessage::Disconnect, &mut r);
        let out = v.on_failure(&id("a"), &mut r);
        assert_eq!(
            out,
            vec![(
                id("p"),
                HpvMessage::Neighbor {
                    high_priority: true
                }
            )]
        );
        assert!(v.on_failure(&id("zz"), &mut r).is_empty());
    }

    #[test]
    fn rejoin_rule() {
        let mut r = rng();
        let dir: BTreeSet<ActorId> = ["a", "b", "c"].into_iter().map(id).collect();
        let mut v = MembershipView::new(id("x"), HpvParams::default());
        let out = v.rejoin_if_isolated(&dir, &mut r).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].1, HpvMessage::Join);
        assert!(v.rejoin_if_isolated(&dir, &mut r).unwrap().is_empty());

        let mut lonely = MembershipView::new(id("x"), HpvParams::default());
        let only_self = BTreeSet::from([id("x")]);
        assert_eq!(
            lonely.rejoin_if_isolated(&only_self, &mut r),
            Err(OverlayError::EmptyDirectory(id("x")))
        );
    }

    #[test]
    fn shuffle_reply_fills_passive() {
        let mut r = rng();
        let mut v = MembershipView::new(id("x"), HpvParams::default());
        v.handle(&id("a"), HpvMessage::Join, &mut r);
        let out = v.handle(
            &id("a"),
            HpvMessage::Shuffle {
                origin: id("o"),
                ttl: 3,
                sample: vec![id("o"), id("q"), id("x")],
            },
            &mut r,
        );
        // Single active peer: the walk stops here and we answer the origin.
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].0, id("o"));
        assert!(v.passive().contains(&id("o")) && v.passive().contains(&id("q")));
        assert!(v.invariants_hold());
    }
}
