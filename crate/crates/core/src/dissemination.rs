//! Periodic anti-entropy over the active view, either by shipping full
//! states or by shipping buffered deltas with cumulative acknowledgements.
//!
//! In delta mode every local change and every inflating remote delta is
//! appended to a per-variable buffer under the next sequence number. Each
//! round a peer receives the join of everything above the sequence it has
//! acknowledged, except entries that came from that peer. Entries every
//! active peer has acknowledged are discarded. A peer that needs discarded
//! entries, or whose acknowledgement has not moved for `fallback_after`
//! rounds, gets the full state instead.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use log::debug;
use thiserror::Error;

use crate::crdt::{Delta, LatticeState};
use crate::dataflow::{DataflowError, Store};
use crate::encoding::{put_tag, put_u64, str_len, ActorId, Encode, VarId};
use crate::encoding::{INT_LEN, TAG_LEN};
use crate::overlay::HpvMessage;

const TAG_FULL_STATE: u8 = 0x01;
const TAG_DELTA_GROUP: u8 = 0x02;
const TAG_ACK: u8 = 0x03;
const TAG_MEMBERSHIP: u8 = 0x04;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    State,
    Delta,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::State => "state",
            Mode::Delta => "delta",
        })
    }
}

#[derive(Debug, Error)]
pub enum DisseminationError {
    #[error(transparent)]
    Dataflow(#[from] DataflowError),
    #[error("membership payload handed to the dissemination layer")]
    Membership,
}

/// Sequence position a full state brings its receiver up to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyncPoint {
    pub epoch: u64,
    pub seq: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Body {
    FullState {
        variable: VarId,
        state: LatticeState,
        sync: Option<SyncPoint>,
    },
    /// The join of buffered entries `from..=to` of the sender's buffer for
    /// `variable` in incarnation `epoch`.
    DeltaGroup {
        variable: VarId,
        epoch: u64,
        from: u64,
        to: u64,
        delta: Delta,
    },
    /// Everything up to `seq` of the receiver's buffer in `epoch` arrived.
    Ack {
        variable: VarId,
        epoch: u64,
        seq: u64,
    },
    Membership(HpvMessage),
}

impl Body {
    pub fn kind(&self) -> &'static str {
        match self {
            Body::FullState { .. } => "full_state",
            Body::DeltaGroup { .. } => "delta_group",
            Body::Ack { .. } => "ack",
            Body::Membership(_) => "membership_control",
        }
    }

    pub fn variable(&self) -> Option<&VarId> {
        match self {
            Body::FullState { variable, .. }
            | Body::DeltaGroup { variable, .. }
            | Body::Ack { variable, .. } => Some(variable),
            Body::Membership(_) => None,
        }
    }
}

/// One message between two nodes. Sender and receiver travel in the
/// transport and are not part of the encoded size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Payload {
    pub sender: ActorId,
    pub receiver: ActorId,
    pub instrumented: bool,
    pub body: Body,
}

impl Payload {
    pub fn membership(sender: ActorId, receiver: ActorId, message: HpvMessage) -> Self {
        Self {
            sender,
            receiver,
            instrumented: false,
            body: Body::Membership(message),
        }
    }

    pub fn kind(&self) -> &'static str {
        self.body.kind()
    }
}

impl Encode for Payload {
    fn encode(&self, out: &mut Vec<u8>) {
        match &self.body {
            Body::FullState {
                variable,
                state,
                sync,
            } => {
                put_tag(out, TAG_FULL_STATE);
                variable.encode(out);
                state.encode(out);
                match sync {
                    None => out.push(0),
                    Some(s) => {
                        out.push(1);
                        put_u64(out, s.epoch);
                        put_u64(out, s.seq);
                    }
                }
            }
            Body::DeltaGroup {
                variable,
                epoch,
                from,
                to,
                delta,
            } => {
                put_tag(out, TAG_DELTA_GROUP);
                variable.encode(out);
                put_u64(out, *epoch);
                put_u64(out, *from);
                put_u64(out, *to);
                delta.encode(out);
            }
            Body::Ack {
                variable,
                epoch,
                seq,
            } => {
                put_tag(out, TAG_ACK);
                variable.encode(out);
                put_u64(out, *epoch);
                put_u64(out, *seq);
            }
            Body::Membership(message) => {
                put_tag(out, TAG_MEMBERSHIP);
                message.encode(out);
            }
        }
    }

    fn encoded_len(&self) -> usize {
        TAG_LEN
            + match &self.body {
                Body::FullState {
                    variable,
                    state,
                    sync,
                } => {
                    str_len(variable.as_str())
                        + state.encoded_len()
                        + 1
                        + if sync.is_some() { 2 * INT_LEN } else { 0 }
                }
                Body::DeltaGroup {
                    variable, delta, ..
                } => str_len(variable.as_str()) + 3 * INT_LEN + delta.encoded_len(),
                Body::Ack { variable, .. } => str_len(variable.as_str()) + 2 * INT_LEN,
                Body::Membership(message) => message.encoded_len(),
            }
    }
}

#[derive(Clone, Debug)]
struct Entry {
    seq: u64,
    /// Peer the delta arrived from; `None` for local changes.
    origin: Option<ActorId>,
    delta: Delta,
}

/// Per-variable log of deltas awaiting acknowledgement.
#[derive(Clone, Debug, Default)]
pub struct DeltaBuffer {
    entries: VecDeque<Entry>,
    latest: u64,
    acked: BTreeMap<ActorId, u64>,
    /// Rounds each peer has been sent something without acknowledging more.
    stalled: BTreeMap<ActorId, (u64, u32)>,
}

impl DeltaBuffer {
    pub fn push(&mut self, delta: Delta, origin: Option<ActorId>) -> u64 {
        self.latest += 1;
        self.entries.push_back(Entry {
            seq: self.latest,
            origin,
            delta,
        });
        self.latest
    }

    /// Highest sequence number issued (0 if none).
    pub fn latest(&self) -> u64 {
        self.latest
    }

    /// Lowest sequence number still held, if any.
    pub fn first_seq(&self) -> Option<u64> {
        self.entries.front().map(|e| e.seq)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn acked(&self, peer: &ActorId) -> u64 {
        self.acked.get(peer).copied().unwrap_or(0)
    }

    /// Raises `peer`'s acknowledged sequence; never lowers it.
    pub fn ack(&mut self, peer: &ActorId, seq: u64) {
        let seq = seq.min(self.latest);
        let entry = self.acked.entry(peer.clone()).or_insert(0);
        *entry = (*entry).max(seq);
    }

    /// Forgets peers outside `peers` and drops entries all of `peers` have
    /// acknowledged. With no peers at all nothing is dropped.
    pub fn compact(&mut self, peers: &BTreeSet<ActorId>) {
        self.acked.retain(|p, _| peers.contains(p));
        self.stalled.retain(|p, _| peers.contains(p));
        let Some(floor) = peers.iter().map(|p| self.acked(p)).min() else {
            return;
        };
        while self.entries.front().is_some_and(|e| e.seq <= floor) {
            self.entries.pop_front();
        }
    }

    /// Join of entries above `after`, skipping those that came from `peer`.
    /// `None` if every such entry came from `peer`.
    fn group_for(&self, peer: &ActorId, after: u64) -> Option<Delta> {
        let mut group: Option<Delta> = None;
        for e in self.entries.iter().filter(|e| e.seq > after) {
            if e.origin.as_ref() == Some(peer) {
                continue;
            }
            match &mut group {
                None => group = Some(e.delta.clone()),
                Some(g) => {
                    g.join_assign(&e.delta)
                        .expect("a buffer only holds deltas of one variable");
                }
            }
        }
        group
    }

    /// Counts one more round without progress for `peer` and returns the
    /// number of such rounds so far.
    fn stall(&mut self, peer: &ActorId) -> u32 {
        let acked = self.acked(peer);
        let entry = self.stalled.entry(peer.clone()).or_insert((acked, 0));
        if entry.0 != acked {
            *entry = (acked, 0);
        }
        entry.1 += 1;
        entry.1
    }

    fn reset_stall(&mut self, peer: &ActorId) {
        self.stalled.remove(peer);
    }
}

/// Result of handling one data payload.
#[derive(Debug, Default)]
pub struct Handled {
    /// Whether the local replica changed.
    pub changed: bool,
    pub reply: Option<Payload>,
}

/// One node's dissemination state.
#[derive(Clone, Debug)]
pub struct Disseminator {
    owner: ActorId,
    mode: Mode,
    epoch: u64,
    fallback_after: u32,
    uninstrumented: BTreeSet<VarId>,
    buffers: BTreeMap<VarId, DeltaBuffer>,
    /// Per (peer, variable): the peer's epoch and the highest contiguous
    /// sequence received from it.
    received: BTreeMap<(ActorId, VarId), (u64, u64)>,
    ignored_acks: u64,
    max_buffer_len: usize,
}

impl Disseminator {
    /// `epoch` distinguishes incarnations of the same node so that a
    /// replacement does not inherit its predecessor's sequence numbers.
    pub fn new(owner: ActorId, mode: Mode, epoch: u64, fallback_after: u32) -> Self {
        Self {
            owner,
            mode,
            epoch,
            fallback_after: fallback_after.max(1),
            uninstrumented: BTreeSet::new(),
            buffers: BTreeMap::new(),
            received: BTreeMap::new(),
            ignored_acks: 0,
            max_buffer_len: 0,
        }
    }

    /// Excludes `variable` from transmission metrics.
    pub fn exclude_from_metrics(&mut self, variable: VarId) {
        self.uninstrumented.insert(variable);
    }

    pub fn is_instrumented(&self, variable: &VarId) -> bool {
        !self.uninstrumented.contains(variable)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn buffer(&self, variable: &VarId) -> Option<&DeltaBuffer> {
        self.buffers.get(variable)
    }

    pub fn ignored_acks(&self) -> u64 {
        self.ignored_acks
    }

    /// Largest number of entries any single buffer has held.
    pub fn max_buffer_len(&self) -> usize {
        self.max_buffer_len
    }

    /// Records a local change for later shipping. No-op in state mode.
    pub fn record_local(&mut self, variable: &VarId, delta: Delta) {
        self.record(variable, delta, None);
    }

    fn record(&mut self, variable: &VarId, delta: Delta, origin: Option<ActorId>) {
        if self.mode == Mode::State || delta.is_bottom() {
            return;
        }
        let buffer = self.buffers.entry(variable.clone()).or_default();
        buffer.push(delta, origin);
        self.max_buffer_len = self.max_buffer_len.max(buffer.len());
    }

    /// One propagation round to `peers`.
    pub fn tick(&mut self, store: &Store, peers: &BTreeSet<ActorId>) -> Vec<Payload> {
        match self.mode {
            Mode::State => self.state_tick(store, peers),
            Mode::Delta => self.delta_tick(store, peers),
        }
    }

    /// Sends every source variable's full state to every peer.
    pub fn state_tick(&self, store: &Store, peers: &BTreeSet<ActorId>) -> Vec<Payload> {
        let mut out = Vec::new();
        for id in store.source_ids() {
            let state = store.state(id.as_str()).expect("listed variables exist");
            for peer in peers {
                out.push(self.payload(
                    peer,
                    Body::FullState {
                        variable: id.clone(),
                        state: state.clone(),
                        sync: None,
                    },
                ));
            }
        }
        out
    }

    /// Sends each peer the unacknowledged part of each buffer.
    pub fn delta_tick(&mut self, store: &Store, peers: &BTreeSet<ActorId>) -> Vec<Payload> {
        let mut out = Vec::new();
        let ids: Vec<VarId> = self.buffers.keys().cloned().collect();
        for id in ids {
            let buffer = self.buffers.get_mut(&id).expect("key just listed");
            buffer.compact(peers);
            let latest = buffer.latest();
            let mut bodies = Vec::new();
            for peer in peers {
                let acked = buffer.acked(peer);
                if acked >= latest {
                    buffer.reset_stall(peer);
                    continue;
                }
                let discarded = buffer.first_seq().is_none_or(|first| acked + 1 < first);
                let stalled = !discarded && buffer.stall(peer) > self.fallback_after;
                if discarded || stalled {
                    buffer.reset_stall(peer);
                    let state = store.state(id.as_str()).expect("buffered variables exist");
                    bodies.push((
                        peer,
                        Body::FullState {
                            variable: id.clone(),
                            state: state.clone(),
                            sync: Some(SyncPoint {
                                epoch: self.epoch,
                                seq: latest,
                            }),
                        },
                    ));
                    continue;
                }
                match buffer.group_for(peer, acked) {
                    Some(delta) => bodies.push((
                        peer,
                        Body::DeltaGroup {
                            variable: id.clone(),
                            epoch: self.epoch,
                            from: acked + 1,
                            to: latest,
                            delta,
                        },
                    )),
                    // Everything pending came from this peer; it has it.
                    None => {
                        buffer.ack(peer, latest);
                        buffer.reset_stall(peer);
                    }
                }
            }
            buffer.compact(peers);
            out.extend(
                bodies
                    .into_iter()
                    .map(|(peer, body)| self.payload(peer, body)),
            );
        }
        out
    }

    /// Joins a received full state or delta group into `store`, buffers it
    /// for relay if it inflated the replica, and acknowledges sequenced
    /// payloads. Acks from peers outside `peers` are ignored.
    pub fn handle(
        &mut self,
        store: &mut Store,
        payload: &Payload,
        peers: &BTreeSet<ActorId>,
    ) -> Result<Handled, DisseminationError> {
        let sender = &payload.sender;
        match &payload.body {
            Body::FullState {
                variable,
                state,
                sync,
            } => {
                let changed = store.merge(variable, state)?;
                if changed {
                    self.record(variable, state.clone(), Some(sender.clone()));
                }
                let reply = sync.map(|s| {
                    let seq = self.advance(sender, variable, s.epoch, 1, s.seq);
                    self.ack(sender, variable, s.epoch, seq)
                });
                Ok(Handled { changed, reply })
            }
            Body::DeltaGroup {
                variable,
                epoch,
                from,
                to,
                delta,
            } => {
                let changed = store.merge(variable, delta)?;
                if changed {
                    self.record(variable, delta.clone(), Some(sender.clone()));
                }
                let seq = self.advance(sender, variable, *epoch, *from, *to);
                Ok(Handled {
                    changed,
                    reply: Some(self.ack(sender, variable, *epoch, seq)),
                })
            }
            Body::Ack {
                variable,
                epoch,
                seq,
            } => {
                if *epoch != self.epoch {
                    debug!("{}: ack from {sender} for old epoch {epoch}", self.owner);
                    self.ignored_acks += 1;
                } else if !peers.contains(sender) {
                    debug!("{}: ignoring ack from non-neighbour {sender}", self.owner);
                    self.ignored_acks += 1;
                } else if let Some(buffer) = self.buffers.get_mut(variable) {
                    buffer.ack(sender, *seq);
                    buffer.compact(peers);
                }
                Ok(Handled::default())
            }
            Body::Membership(_) => Err(DisseminationError::Membership),
        }
    }

    /// Updates the contiguous prefix received from `sender` and returns it.
    fn advance(
        &mut self,
        sender: &ActorId,
        variable: &VarId,
        epoch: u64,
        from: u64,
        to: u64,
    ) -> u64 {
        let slot = self
            .received
            .entry((sender.clone(), variable.clone()))
            .or_insert((epoch, 0));
        if slot.0 != epoch {
            *slot = (epoch, 0);
        }
        if from <= slot.1 + 1 {
            slot.1 = slot.1.max(to);
        }
        slot.1
    }

    fn ack(&self, to: &ActorId, variable: &VarId, epoch: u64, seq: u64) -> Payload {
        self.payload(
            to,
            Body::Ack {
                variable: variable.clone(),
                epoch,
                seq,
            },
        )
    }

    fn payload(&self, receiver: &ActorId, body: Body) -> Payload {
        let instrumented = body.variable().is_some_and(|v| self.is_instrumented(v));
        Payload {
            sender: self.owner.clone(),
            receiver: receiver.clone(),
            instrumented,
            body,
        }
    }
}
