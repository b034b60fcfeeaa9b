use super::OverlayError;
use crate::encoding::{put_count, put_tag, put_u64, str_len, ActorId, Encode, Reader};
use crate::encoding::{COUNT_LEN, INT_LEN, TAG_LEN};

const TAG_JOIN: u8 = 0x01;
const TAG_FORWARD_JOIN: u8 = 0x02;
const TAG_NEIGHBOR: u8 = 0x03;
const TAG_NEIGHBOR_REPLY: u8 = 0x04;
const TAG_DISCONNECT: u8 = 0x05;
const TAG_SHUFFLE: u8 = 0x06;
const TAG_SHUFFLE_REPLY: u8 = 0x07;

/// Partial-view protocol messages. The sender is carried by the transport.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HpvMessage {
    Join,
    ForwardJoin {
        new_node: ActorId,
        ttl: u64,
    },
    Neighbor {
        high_priority: bool,
    },
    NeighborReply {
        accepted: bool,
    },
    Disconnect,
    Shuffle {
        origin: ActorId,
        ttl: u64,
        sample: Vec<ActorId>,
    },
    ShuffleReply {
        sample: Vec<ActorId>,
    },
}

impl HpvMessage {
    pub fn name(&self) -> &'static str {
        match self {
            HpvMessage::Join => "join",
            HpvMessage::ForwardJoin { .. } => "forward_join",
            HpvMessage::Neighbor { .. } => "neighbor",
            HpvMessage::NeighborReply { .. } => "neighbor_reply",
            HpvMessage::Disconnect => "disconnect",
            HpvMessage::Shuffle { .. } => "shuffle",
            HpvMessage::ShuffleReply { .. } => "shuffle_reply",
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, OverlayError> {
        let mut r = Reader::new(bytes);
        let msg = Self::read(&mut r).map_err(|e| e.unwrap_or(OverlayError::Truncated))?;
        if !r.is_empty() {
            return Err(OverlayError::TrailingBytes(r.remaining()));
        }
        Ok(msg)
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, Option<OverlayError>> {
        let tag = r.u8().map_err(|_| None)?;
        let actor = |r: &mut Reader<'_>| r.str().map(ActorId::new).map_err(|_| None);
        let flag = |r: &mut Reader<'_>| r.u8().map(|b| b != 0).map_err(|_| None);
        let sample = |r: &mut Reader<'_>| -> Result<Vec<ActorId>, Option<OverlayError>> {
            let n = r.u32().map_err(|_| None)?;
            (0..n).map(|_| actor(r)).collect()
        };
        Ok(match tag {
            TAG_JOIN => HpvMessage::Join,
            TAG_FORWARD_JOIN => HpvMessage::ForwardJoin {
                new_node: actor(r)?,
                ttl: r.u64().map_err(|_| None)?,
            },
            TAG_NEIGHBOR => HpvMessage::Neighbor {
                high_priority: flag(r)?,
            },
            TAG_NEIGHBOR_REPLY => HpvMessage::NeighborReply { accepted: flag(r)? },
            TAG_DISCONNECT => HpvMessage::Disconnect,
            TAG_SHUFFLE => HpvMessage::Shuffle {
                origin: actor(r)?,
                ttl: r.u64().map_err(|_| None)?,
                sample: sample(r)?,
            },
            TAG_SHUFFLE_REPLY => HpvMessage::ShuffleReply { sample: sample(r)? },
            other => return Err(Some(OverlayError::UnknownMessage(other))),
        })
    }
}

fn sample_len(sample: &[ActorId]) -> usize {
    COUNT_LEN + sample.iter().map(Encode::encoded_len).sum::<usize>()
}

fn put_sample(out: &mut Vec<u8>, sample: &[ActorId]) {
    put_count(out, sample.len());
    for id in sample {
        id.encode(out);
    }
}

impl Encode for HpvMessage {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            HpvMessage::Join => put_tag(out, TAG_JOIN),
            HpvMessage::ForwardJoin { new_node, ttl } => {
                put_tag(out, TAG_FORWARD_JOIN);
                new_node.encode(out);
                put_u64(out, *ttl);
            }
            HpvMessage::Neighbor { high_priority } => {
                put_tag(out, TAG_NEIGHBOR);
                out.push(u8::from(*high_priority));
            }
            HpvMessage::NeighborReply { accepted } => {
                put_tag(out, TAG_NEIGHBOR_REPLY);
                out.push(u8::from(*accepted));
            }
            HpvMessage::Disconnect => put_tag(out, TAG_DISCONNECT),
            HpvMessage::Shuffle {
                origin,
                ttl,
                sample,
            } => {
                put_tag(out, TAG_SHUFFLE);
                origin.encode(out);
                put_u64(out, *ttl);
                put_sample(out, sample);
            }
            HpvMessage::ShuffleReply { sample } => {
                put_tag(out, TAG_SHUFFLE_REPLY);
                put_sample(out, sample);
            }
        }
    }

    fn encoded_len(&self) -> usize {
        TAG_LEN
            + match self {
                HpvMessage::Join | HpvMessage::Disconnect => 0,
                HpvMessage::ForwardJoin { new_node, .. } => str_len(new_node.as_str()) + INT_LEN,
                HpvMessage::Neighbor { .. } | HpvMessage::NeighborReply { .. } => 1,
                HpvMessage::Shuffle { origin, sample, .. } => {
                    str_len(origin.as_str()) + INT_LEN + sample_len(sample)
                }
                HpvMessage::ShuffleReply { sample } => sample_len(sample),
            }
    }
}
