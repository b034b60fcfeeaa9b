//! Workflow CRDT: a fixed sequence of grow-only flag maps used as barriers.
//!
//! Each task is a [`GMap`] from node identifier to "done". A task is
//! complete once every expected node has set its flag, and a node may only
//! work on a task after all earlier tasks are complete. Because every map
//! only grows, a replica that once observed a task complete observes it
//! complete forever, so nodes can synchronise phases without a coordinator.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::crdt::{GMap, Lattice, LatticeState, Pair};
use crate::encoding::{put_count, put_tag, ActorId, Encode};
use crate::encoding::{COUNT_LEN, TAG_LEN};

pub(crate) const TAG_WORKFLOW: u8 = 0x05;

/// The experiment phases, in order.
pub const EXPERIMENT_TASKS: [&str; 4] = [
    "event-generation",
    "convergence",
    "log-aggregation",
    "shutdown",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkflowError {
    #[error("a workflow needs at least one task")]
    NoTasks,
    #[error("task index {index} out of range for a workflow of {len} tasks")]
    TaskOutOfRange { index: usize, len: usize },
}

/// Position of a task in the workflow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskIndex(pub usize);

impl fmt::Display for TaskIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "task {}", self.0)
    }
}

/// What a node should do next, as seen from its replica.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    /// Every earlier task is complete and the node has not flagged this one.
    Work(TaskIndex),
    /// The node flagged this task and is waiting for the others.
    Wait(TaskIndex),
    /// All tasks are complete.
    Done,
}

impl Step {
    pub fn task(&self) -> Option<TaskIndex> {
        match self {
            Step::Work(t) | Step::Wait(t) => Some(*t),
            Step::Done => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Workflow {
    tasks: Vec<GMap>,
}

impl Workflow {
    pub fn new(task_count: usize) -> Result<Self, WorkflowError> {
        if task_count == 0 {
            return Err(WorkflowError::NoTasks);
        }
        Ok(Self {
            tasks: vec![GMap::new(); task_count],
        })
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn task(&self, task: TaskIndex) -> Result<&GMap, WorkflowError> {
        self.tasks.get(task.0).ok_or(WorkflowError::TaskOutOfRange {
            index: task.0,
            len: self.tasks.len(),
        })
    }

    pub fn tasks(&self) -> &[GMap] {
        &self.tasks
    }

    /// Sets `node`'s flag on `task`. The delta has the same length and only
    /// that one entry.
    pub fn mark_complete(
        &self,
        task: TaskIndex,
        node: &ActorId,
    ) -> Result<(Workflow, Workflow), WorkflowError> {
        let map = self.task(task)?;
        let (updated, entry) = map.set_true(node);
        let mut next = self.clone();
        next.tasks[task.0] = updated;
        let mut delta = Workflow::new(self.tasks.len())?;
        delta.tasks[task.0] = entry;
        Ok((next, delta))
    }

    /// True iff every expected node has flagged `task`. Flags from nodes
    /// outside `expected` are ignored. An out-of-range task is never complete.
    pub fn is_task_complete(&self, task: TaskIndex, expected: &BTreeSet<ActorId>) -> bool {
        debug_assert!(!expected.is_empty(), "barrier over an empty node set");
        match self.tasks.get(task.0) {
            Some(map) => expected.iter().all(|node| map.flag(node)),
            None => false,
        }
    }

    pub fn current_task(&self, node: &ActorId, expected: &BTreeSet<ActorId>) -> Step {
        for (i, map) in self.tasks.iter().enumerate() {
            if !self.is_task_complete(TaskIndex(i), expected) {
                return if map.flag(node) {
                    Step::Wait(TaskIndex(i))
                } else {
                    Step::Work(TaskIndex(i))
                };
            }
        }
        Step::Done
    }

    /// Expected nodes that have not flagged `task`.
    pub fn missing(&self, task: TaskIndex, expected: &BTreeSet<ActorId>) -> Vec<ActorId> {
        let Some(map) = self.tasks.get(task.0) else {
            return expected.iter().cloned().collect();
        };
        expected.iter().filter(|n| !map.flag(n)).cloned().collect()
    }

    /// The same lattice written as right-nested pairs:
    /// `Pair(t0, Pair(t1, ... t_{n-1}))`.
    pub fn to_nested_pairs(&self) -> LatticeState {
        let mut iter = self.tasks.iter().rev();
        let last = iter.next().expect("workflow has at least one task");
        iter.fold(LatticeState::GMap(last.clone()), |acc, map| {
            LatticeState::Pair(Box::new(Pair::new(LatticeState::GMap(map.clone()), acc)))
        })
    }
}

impl Lattice for Workflow {
    /// # Panics
    /// If the two workflows have a different number of tasks.
    fn join_assign(&mut self, other: &Self) -> bool {
        assert_eq!(
            self.tasks.len(),
            other.tasks.len(),
            "joining workflows of different lengths"
        );
        let mut changed = false;
        for (mine, theirs) in self.tasks.iter_mut().zip(&other.tasks) {
            changed |= mine.join_assign(theirs);
        }
        changed
    }

    fn is_bottom(&self) -> bool {
        self.tasks.iter().all(GMap::is_empty)
    }
}

impl Encode for Workflow {
    fn encode(&self, out: &mut Vec<u8>) {
        put_tag(out, TAG_WORKFLOW);
        put_count(out, self.tasks.len());
        for map in &self.tasks {
            map.encode(out);
        }
    }

    fn encoded_len(&self) -> usize {
        TAG_LEN + COUNT_LEN + self.tasks.iter().map(Encode::encoded_len).sum::<usize>()
    }
}
