//! Generators shared by the property suites.

#![allow(dead_code)]

use lasp_core::crdt::{Delta, Element, LatticeState, Mutation, Variant};
use lasp_core::workflow::TaskIndex;
use lasp_core::ActorId;
use proptest::prelude::*;

pub const REPLICAS: usize = 3;
pub const WORKFLOW_TASKS: usize = 3;

pub fn actor(i: usize) -> ActorId {
    ActorId::new(format!("r{i}"))
}

pub fn variants() -> Vec<Variant> {
    vec![
        Variant::GCounter,
        Variant::AWSet,
        Variant::GMap,
        Variant::Pair(Box::new(Variant::GCounter), Box::new(Variant::AWSet)),
        Variant::Workflow(WORKFLOW_TASKS),
    ]
}

/// A mutation choice independent of the variant; `mutation` interprets it.
#[derive(Clone, Debug)]
pub struct Op {
    pub kind: u8,
    pub value: u8,
}

pub fn op() -> impl Strategy<Value = Op> {
    (0u8..4, 0u8..6).prop_map(|(kind, value)| Op { kind, value })
}

/// Interprets `op` as a mutation of `variant` issued by `actor`.
pub fn mutation(variant: &Variant, actor: &ActorId, op: &Op) -> Mutation {
    match variant {
        Variant::GCounter => Mutation::Increment {
            actor: actor.clone(),
            amount: u64::from(op.value) + 1,
        },
        Variant::AWSet => {
            let element = Element::Int(i64::from(op.value % 4));
            if op.kind < 2 {
                Mutation::Add {
                    actor: actor.clone(),
                    element,
                }
            } else {
                Mutation::Remove { element }
            }
        }
        Variant::GMap => Mutation::SetTrue {
            key: ActorId::new(format!("k{}", op.value)),
        },
        Variant::Pair(a, b) => {
            if op.kind.is_multiple_of(2) {
                Mutation::First(Box::new(mutation(
                    a,
                    actor,
                    &Op {
                        kind: op.kind / 2,
                        value: op.value,
                    },
                )))
            } else {
                Mutation::Second(Box::new(mutation(
                    b,
                    actor,
                    &Op {
                        kind: op.kind / 2,
                        value: op.value,
                    },
                )))
            }
        }
        Variant::Workflow(n) => Mutation::MarkComplete {
            task: TaskIndex(usize::from(op.value) % n),
            node: ActorId::new(format!("n{}", op.kind)),
        },
    }
}

/// One step of a replicated history.
#[derive(Clone, Debug)]
pub enum Step {
    /// Replica `.0` applies an operation as its own actor.
    Mutate(usize, Op),
    /// Replica `.1` joins replica `.0`'s full state.
    Sync(usize, usize),
}

pub fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        3 => (0..REPLICAS, op()).prop_map(|(r, o)| Step::Mutate(r, o)),
        1 => (0..REPLICAS, 0..REPLICAS).prop_map(|(a, b)| Step::Sync(a, b)),
    ]
}

pub fn history() -> impl Strategy<Value = Vec<Step>> {
    prop::collection::vec(step(), 0..24)
}

/// Final replica states and every delta produced, in issue order.
pub fn replay(variant: &Variant, history: &[Step]) -> (Vec<LatticeState>, Vec<Delta>) {
    let mut replicas = vec![variant.bottom(); REPLICAS];
    let mut deltas = Vec::new();
    for s in history {
        match s {
            Step::Mutate(r, o) => {
                let m = mutation(variant, &actor(*r), o);
                let (next, delta) = replicas[*r]
                    .apply(&m)
                    .expect("generated mutations fit the variant");
                replicas[*r] = next;
                deltas.push(delta);
            }
            Step::Sync(from, to) => {
                let source = replicas[*from].clone();
                replicas[*to].join_assign(&source).expect("same variant");
            }
        }
    }
    (replicas, deltas)
}

pub fn join(a: &LatticeState, b: &LatticeState) -> LatticeState {
    a.join(b).expect("same variant")
}

pub fn leq(a: &LatticeState, b: &LatticeState) -> bool {
    join(a, b) == *b
}
