//! Cluster membership: the datacenter star and a HyParView-style
//! partial-view protocol, plus connectivity analysis over the resulting
//! overlay graph.

mod graph;
mod message;
mod view;

pub use graph::{build_star, diameter, is_single_component, star_views, OverlayGraph};
pub use message::HpvMessage;
pub use view::{MembershipView, Outgoing};

use thiserror::Error;

use crate::encoding::ActorId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OverlayError {
    #[error("unknown membership message tag {0:#04x}")]
    UnknownMessage(u8),
    #[error("membership message truncated")]
    Truncated,
    #[error("membership message has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("a star needs at least one client")]
    NoClients,
    #[error("server {0} is also listed as a client")]
    ServerIsClient(ActorId),
    #[error("overlay graph is disconnected")]
    Disconnected,
    #[error("node {0} is isolated and has nobody to rejoin through")]
    EmptyDirectory(ActorId),
    #[error("invalid membership parameters: {0}")]
    InvalidParams(&'static str),
}

/// Partial-view protocol parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HpvParams {
    pub active_max: usize,
    pub passive_max: usize,
    /// Hops a forward-join travels before the new node must be accepted.
    pub active_random_walk_length: u64,
    /// Hop count at which a forward-join also records the new node passively.
    pub passive_random_walk_length: u64,
    pub shuffle_interval_ticks: u64,
    pub shuffle_active_sample: usize,
    pub shuffle_passive_sample: usize,
}

impl Default for HpvParams {
    fn default() -> Self {
        Self {
            active_max: 5,
            passive_max: 30,
            active_random_walk_length: 6,
            passive_random_walk_length: 3,
            shuffle_interval_ticks: 10,
            shuffle_active_sample: 3,
            shuffle_passive_sample: 4,
        }
    }
}

impl HpvParams {
    pub fn validate(&self) -> Result<(), OverlayError> {
        if self.active_max == 0 || self.passive_max == 0 {
            return Err(OverlayError::InvalidParams("view sizes must be positive"));
        }
        if self.active_random_walk_length == 0 || self.passive_random_walk_length == 0 {
            return Err(OverlayError::InvalidParams(
                "random walk lengths must be positive",
            ));
        }
        if self.passive_random_walk_length > self.active_random_walk_length {
            return Err(OverlayError::InvalidParams(
                "passive walk length exceeds active walk length",
            ));
        }
        if self.shuffle_interval_ticks == 0 {
            return Err(OverlayError::InvalidParams(
                "shuffle interval must be positive",
            ));
        }
        if self.shuffle_active_sample == 0 && self.shuffle_passive_sample == 0 {
            return Err(OverlayError::InvalidParams("shuffle sample is empty"));
        }
        Ok(())
    }
}
