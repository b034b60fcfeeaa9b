//! Join-semilattice CRDTs with full-state mutators and delta-mutators.
//!
//! Every mutator returns `(new_state, delta)` where the delta is a state of
//! the same type holding only what changed, so that
//! `old.join(&delta) == new_state`.

mod awset;
mod element;
mod gcounter;
mod gmap;
mod state;

pub use awset::{AWSet, CausalContext, Dot};
pub use element::Element;
pub use gcounter::GCounter;
pub use gmap::GMap;
pub use state::{Delta, LatticeState, Mutation, Pair, Variant};

use thiserror::Error;

use crate::workflow::WorkflowError;

/// A join-semilattice.
pub trait Lattice: Clone + PartialEq {
    /// Joins `other` into `self`, returning whether `self` changed.
    fn join_assign(&mut self, other: &Self) -> bool;

    /// Least upper bound of `self` and `other`.
    fn join(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.join_assign(other);
        out
    }

    fn is_bottom(&self) -> bool;

    /// Lattice order: `self <= other` iff joining `self` into `other` is a no-op.
    fn leq(&self, other: &Self) -> bool {
        !other.clone().join_assign(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CrdtError {
    #[error("cannot join a {left} with a {right}")]
    VariantMismatch { left: String, right: String },
    #[error("mutation {mutation} does not apply to a {variant}")]
    MutationMismatch {
        mutation: &'static str,
        variant: String,
    },
    #[error("increment amount must be at least 1")]
    ZeroIncrement,
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
}
