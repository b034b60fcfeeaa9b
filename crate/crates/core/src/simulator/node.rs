use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Topology};
use crate::crdt::{Mutation, Variant};
use crate::dataflow::Store;
use crate::dissemination::Disseminator;
use crate::encoding::{ActorId, VarId};
use crate::overlay::MembershipView;
use crate::scenario::{self, Ad, Contract, RetirementTriggers};
use crate::workflow::{Step, TaskIndex, Workflow, EXPERIMENT_TASKS};

pub const SERVER: &str = "server";
pub const WORKFLOW: &str = "workflow";

const STREAM_PROTOCOL: u64 = 0;
const STREAM_WORKLOAD: u64 = 1;
const STREAM_LATENCY: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Server,
    Client,
}

pub fn client_id(index: usize) -> ActorId {
    ActorId::new(format!("client-{index:04}"))
}

/// Generator for one purpose of one node, seeded from the experiment seed
/// and the hash of the node's actor identifier.
pub fn node_rng(seed: u64, actor: &ActorId, stream: u64) -> ChaCha8Rng {
    let digest = Sha256::digest(actor.as_str().as_bytes());
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ u64::from_be_bytes(word));
    rng.set_stream(stream);
    rng
}

/// One simulated process.
pub struct SimNode {
    /// Stable identifier used by the overlay and the workflow barrier.
    pub slot: ActorId,
    /// CRDT actor of this incarnation. Equal to `slot` for the first one.
    pub actor: ActorId,
    pub incarnation: u64,
    pub role: Role,
    pub store: Store,
    pub view: MembershipView,
    pub dissemination: Disseminator,
    pub triggers: Option<RetirementTriggers>,
    pub rng: ChaCha8Rng,
    pub workload_rng: ChaCha8Rng,
    pub latency_rng: ChaCha8Rng,
    /// Offset of this slot's impression schedule within an interval.
    pub impression_offset: u64,
    /// Impressions made by every incarnation of this slot so far.
    pub impressions_done: u64,
    /// Whether the node has started joining the overlay.
    pub joined: bool,
}

impl SimNode {
    pub fn new(
        config: &ExperimentConfig,
        slot: ActorId,
        role: Role,
        incarnation: u64,
        ads: &[Ad],
        contracts: &[Contract],
    ) -> Self {
        let actor = if incarnation == 0 {
            slot.clone()
        } else {
            ActorId::new(format!("{slot}~{incarnation}"))
        };
        let mut store = Store::new();
        scenario::initialize(&mut store, ads, contracts, &ActorId::new(SERVER))
            .expect("catalog validated with the config");
        store
            .declare(WORKFLOW, Variant::Workflow(EXPERIMENT_TASKS.len()))
            .expect("workflow declared once");
        let triggers = (role == Role::Server || config.client_triggers).then(|| {
            RetirementTriggers::register(&mut store, ads).expect("every ad has a counter")
        });
        let mut dissemination = Disseminator::new(
            slot.clone(),
            config.mode,
            incarnation,
            config.fallback_after,
        );
        dissemination.exclude_from_metrics(VarId::new(WORKFLOW));
        let view = MembershipView::new(slot.clone(), config.hpv.clone());
        let mut workload_rng = node_rng(config.seed, &actor, STREAM_WORKLOAD);
        let impression_offset = workload_rng.random_range(0..config.impression_interval);
        Self {
            rng: node_rng(config.seed, &actor, STREAM_PROTOCOL),
            latency_rng: node_rng(config.seed, &actor, STREAM_LATENCY),
            workload_rng,
            slot,
            actor,
            incarnation,
            role,
            store,
            view,
            dissemination,
            triggers,
            impression_offset,
            impressions_done: 0,
            joined: config.topology == Topology::Star,
        }
    }

    pub fn workflow(&self) -> &Workflow {
        self.store
            .state(WORKFLOW)
            .and_then(|s| s.as_workflow())
            .expect("workflow variable is declared at creation")
    }

    pub fn step(&self, expected: &BTreeSet<ActorId>) -> Step {
        self.workflow().current_task(&self.slot, expected)
    }

    /// Sets this node's flag on `task` and queues the change.
    pub fn mark(&mut self, task: TaskIndex) {
        let id = VarId::new(WORKFLOW);
        let delta = self
            .store
            .update(
                WORKFLOW,
                &Mutation::MarkComplete {
                    task,
                    node: self.slot.clone(),
                },
            )
            .expect("task index within the workflow");
        self.dissemination.record_local(&id, delta);
    }

    pub fn latency(&mut self, range: (u64, u64)) -> u64 {
        if range.0 == range.1 {
            range.0
        } else {
            self.latency_rng.random_range(range.0..=range.1)
        }
    }
}

/// Metrics phase for a workflow position.
pub fn phase_of(step: Step, started: bool) -> u8 {
    if !started {
        return 0;
    }
    match step {
        Step::Work(t) | Step::Wait(t) => t.0 as u8 + 1,
        Step::Done => EXPERIMENT_TASKS.len() as u8 + 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn seeds_differ_per_node_and_stream() {
        let a = ActorId::new("client-0001");
        let b = ActorId::new("client-0002");
        assert_eq!(node_rng(1, &a, 0).next_u64(), node_rng(1, &a, 0).next_u64());
        assert_ne!(node_rng(1, &a, 0).next_u64(), node_rng(1, &b, 0).next_u64());
        assert_ne!(node_rng(1, &a, 0).next_u64(), node_rng(1, &a, 1).next_u64());
        assert_ne!(node_rng(1, &a, 0).next_u64(), node_rng(2, &a, 0).next_u64());
    }

    #[test]
    fn replacement_gets_a_fresh_actor() {
        let cfg = ExperimentConfig::default();
        let (ads, contracts) = scenario::default_catalog(2, 1, 10);
        let first = SimNode::new(&cfg, client_id(7), Role::Client, 0, &ads, &contracts);
        let second = SimNode::new(&cfg, client_id(7), Role::Client, 1, &ads, &contracts);
        assert_eq!(first.actor, ActorId::new("client-0007"));
        assert_eq!(second.actor, ActorId::new("client-0007~1"));
        assert_eq!(first.slot, second.slot);
        assert!(first.triggers.is_none());
        let server = SimNode::new(
            &cfg,
            ActorId::new(SERVER),
            Role::Server,
            0,
            &ads,
            &contracts,
        );
        assert_eq!(
            server.triggers.as_ref().map(RetirementTriggers::len),
            Some(2)
        );
    }
}
