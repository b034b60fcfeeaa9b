//! Delta-state CRDTs, a Lasp-style dataflow store, and a deterministic
//! gossip simulator for the advertisement-counter application.

pub mod crdt;
pub mod dataflow;
pub mod dissemination;
pub mod encoding;
pub mod overlay;
pub mod scenario;
pub mod simulator;
pub mod workflow;

pub use encoding::{encoded_size, ActorId, Encode, VarId};
