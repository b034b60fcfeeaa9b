//! Deterministic tick-driven execution of the advertisement experiment.
//!
//! One tick is one simulated second. Each tick, in order: due messages are
//! delivered, nodes act on their workflow position (impressions, barrier
//! marks) and fire retirement triggers, every node runs a dissemination
//! round if the tick is a propagation tick, the membership protocol runs
//! (bootstrap joins, rejoins, shuffles), churn is applied, and finally the
//! observer checks connectivity, convergence and termination.
//!
//! The observer is omniscient: it decides when the overlay is connected and
//! the experiment may start, and it checks that every replica agrees. Nodes
//! themselves only ever see their own state and the messages they receive.

mod config;
mod metrics;
mod node;
mod report;

pub use config::{ConfigError, ExperimentConfig, Topology, TICKS_PER_MINUTE};
pub use metrics::{KindTotals, MetricsRecord, MetricsSink, CSV_HEADER};
pub use node::{client_id, node_rng, phase_of, Role, SimNode, SERVER, WORKFLOW};
pub use report::{ChurnEvent, Report, RetirementRecord, TraceSummary};

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dissemination::{Body, DisseminationError, Payload};
use crate::encoding::{ActorId, VarId};
use crate::overlay::{is_single_component, star_views, OverlayError, OverlayGraph};
use crate::scenario::{self, Ad, ScenarioError, ADS};
use crate::workflow::{Step, TaskIndex, EXPERIMENT_TASKS};

const TASK_EVENTS: TaskIndex = TaskIndex(0);
const TASK_CONVERGENCE: TaskIndex = TaskIndex(1);
const STREAM_WORLD: u64 = 3;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("overlay still not a single component at tick {tick}")]
    BootstrapTimeout { tick: u64 },
    #[error("task {task} still incomplete at tick {tick}; waiting on {}", missing.join(", "))]
    PhaseTimeout {
        task: &'static str,
        tick: u64,
        missing: Vec<String>,
    },
    #[error(transparent)]
    Dissemination(#[from] DisseminationError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Overlay(#[from] OverlayError),
    #[error("writing metrics: {0}")]
    Io(#[from] io::Error),
}

struct Envelope {
    payload: Payload,
    sender_incarnation: u64,
    receiver_incarnation: u64,
}

/// Per-node bookkeeping for the trace checks.
#[derive(Default)]
struct Observed {
    displayable: BTreeSet<String>,
    dropped: BTreeSet<String>,
}

/// A running experiment.
pub struct Simulation {
    config: ExperimentConfig,
    ads: Vec<Ad>,
    nodes: Vec<SimNode>,
    index: BTreeMap<ActorId, usize>,
    expected: BTreeSet<ActorId>,
    queue: BTreeMap<u64, Vec<Envelope>>,
    tick: u64,
    world_rng: ChaCha8Rng,
    join_order: Vec<usize>,
    next_join: usize,
    started_at: Option<u64>,
    finished_at: Option<u64>,
    sink: MetricsSink,
    trace: TraceSummary,
    observed: Vec<Observed>,
    /// First tick each slot marked each task.
    marks: Vec<BTreeMap<ActorId, u64>>,
    first_retirement: BTreeMap<String, u64>,
    last_event: Option<u64>,
    event_this_tick: bool,
    diameter_at_event: Option<usize>,
    converged_at: Option<u64>,
    overlay_version: u64,
    diameter_cache: Option<(u64, Option<usize>)>,
    diameter_samples: Vec<(u64, Option<usize>)>,
    overlay_dump: Vec<String>,
    churn_events: Vec<ChurnEvent>,
    retired_max_buffer: usize,
    retired_ignored_acks: u64,
    /// Metrics phase per node, cleared whenever its workflow changes.
    phases: Vec<Option<(bool, u8)>>,
}

impl Simulation {
    /// Builds the initial world. `metrics` receives the CSV stream; with
    /// `retain_records` every record is also kept for the report.
    pub fn new(
        config: ExperimentConfig,
        metrics: Option<Box<dyn Write + Send>>,
        retain_records: bool,
    ) -> Result<Self, SimError> {
        config.validate()?;
        let (ads, contracts) =
            scenario::default_catalog(config.ad_count, config.contracts_per_ad, config.threshold);
        let server = ActorId::new(SERVER);
        let mut nodes = vec![SimNode::new(
            &config,
            server.clone(),
            Role::Server,
            0,
            &ads,
            &contracts,
        )];
        for i in 1..=config.client_count {
            nodes.push(SimNode::new(
                &config,
                client_id(i),
                Role::Client,
                0,
                &ads,
                &contracts,
            ));
        }
        let index: BTreeMap<ActorId, usize> = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.slot.clone(), i))
            .collect();
        let expected: BTreeSet<ActorId> = index.keys().cloned().collect();

        let mut world_rng = node_rng(config.seed, &ActorId::new("~world"), STREAM_WORLD);
        let mut join_order: Vec<usize> = (1..nodes.len()).collect();
        match config.topology {
            Topology::Star => {
                let clients: BTreeSet<ActorId> =
                    expected.iter().filter(|n| **n != server).cloned().collect();
                for view in star_views(&server, &clients)? {
                    let i = index[view.owner()];
                    nodes[i].view = view;
                }
                join_order.clear();
            }
            Topology::HyParView => {
                join_order.shuffle(&mut world_rng);
                nodes[0].joined = true;
            }
        }

        let observed = nodes
            .iter()
            .map(|n| Observed {
                displayable: scenario::displayable(&n.store).into_iter().collect(),
                dropped: BTreeSet::new(),
            })
            .collect();
        let phases = vec![None; nodes.len()];
        Ok(Self {
            sink: MetricsSink::new(metrics, retain_records)?,
            ads,
            nodes,
            index,
            expected,
            queue: BTreeMap::new(),
            tick: 0,
            world_rng,
            join_order,
            next_join: 0,
            started_at: None,
            finished_at: None,
            trace: TraceSummary::default(),
            observed,
            marks: vec![BTreeMap::new(); EXPERIMENT_TASKS.len()],
            first_retirement: BTreeMap::new(),
            last_event: None,
            event_this_tick: false,
            diameter_at_event: None,
            converged_at: None,
            overlay_version: 0,
            diameter_cache: None,
            diameter_samples: Vec::new(),
            overlay_dump: Vec::new(),
            churn_events: Vec::new(),
            retired_max_buffer: 0,
            retired_ignored_acks: 0,
            phases,
            config,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn nodes(&self) -> &[SimNode] {
        &self.nodes
    }

    pub fn node(&self, slot: &ActorId) -> Option<&SimNode> {
        self.index.get(slot).map(|&i| &self.nodes[i])
    }

    pub fn expected(&self) -> &BTreeSet<ActorId> {
        &self.expected
    }

    pub fn started_at(&self) -> Option<u64> {
        self.started_at
    }

    pub fn is_finished(&self) -> bool {
        self.finished_at.is_some()
    }

    pub fn last_event(&self) -> Option<u64> {
        self.last_event
    }

    pub fn pending_messages(&self) -> usize {
        self.queue.values().map(Vec::len).sum()
    }

    pub fn overlay(&self) -> OverlayGraph {
        OverlayGraph::from_views(self.nodes.iter().map(|n| &n.view))
    }

    /// True iff every node holds an identical replica of every
    /// instrumented variable.
    pub fn oracle_converged(&self) -> bool {
        let reference = &self.nodes[0];
        let ids: Vec<&VarId> = reference
            .store
            .source_ids()
            .filter(|id| reference.dissemination.is_instrumented(id))
            .collect();
        self.nodes[1..].iter().all(|n| {
            ids.iter()
                .all(|id| n.store.state(id.as_str()) == reference.store.state(id.as_str()))
        })
    }

    /// Runs to completion.
    pub fn run(mut self) -> Result<Report, SimError> {
        while !self.is_finished() {
            self.step_tick()?;
        }
        self.into_report()
    }

    /// Advances the world by one tick.
    pub fn step_tick(&mut self) -> Result<(), SimError> {
        let now = self.tick;
        self.event_this_tick = false;
        self.deliver(now)?;
        let started = self.started_at.is_some_and(|s| now >= s);
        if started {
            self.act(now)?;
            if now.is_multiple_of(self.config.propagation_interval) {
                self.propagate(now)?;
            }
        }
        if self.config.topology == Topology::HyParView {
            self.membership(now)?;
        }
        if let (Some(p), Some(start)) = (self.config.churn, self.started_at) {
            if now > start && now.is_multiple_of(TICKS_PER_MINUTE) && self.finished_at.is_none() {
                self.churn(now, p)?;
            }
        }
        self.observe(now)?;
        self.tick += 1;
        Ok(())
    }

    fn send(&mut self, from: usize, payload: Payload, now: u64) -> Result<(), SimError> {
        let Some(&to) = self.index.get(&payload.receiver) else {
            debug!("dropping message to unknown node {}", payload.receiver);
            return Ok(());
        };
        let phase = self.phase(from, now);
        self.sink
            .record(MetricsRecord::from_payload(now, &payload, phase))?;
        let delay = self.nodes[from].latency(self.config.latency);
        let envelope = Envelope {
            sender_incarnation: self.nodes[from].incarnation,
            receiver_incarnation: self.nodes[to].incarnation,
            payload,
        };
        self.queue.entry(now + delay).or_default().push(envelope);
        Ok(())
    }

    fn phase(&mut self, i: usize, now: u64) -> u8 {
        let started = self.started_at.is_some_and(|s| now >= s);
        match self.phases[i] {
            Some((s, phase)) if s == started => phase,
            _ => {
                let phase = phase_of(self.nodes[i].step(&self.expected), started);
                self.phases[i] = Some((started, phase));
                phase
            }
        }
    }

    fn send_membership(
        &mut self,
        from: usize,
        out: Vec<(ActorId, crate::overlay::HpvMessage)>,
        now: u64,
    ) -> Result<(), SimError> {
        let sender = self.nodes[from].slot.clone();
        for (to, message) in out {
            self.send(from, Payload::membership(sender.clone(), to, message), now)?;
        }
        Ok(())
    }

    fn deliver(&mut self, now: u64) -> Result<(), SimError> {
        let Some(batch) = self.queue.remove(&now) else {
            return Ok(());
        };
        for envelope in batch {
            let payload = envelope.payload;
            let to = self.index[&payload.receiver];
            let from = self.index[&payload.sender];
            // State travels regardless of who sent it, but control traffic
            // between incarnations that no longer exist is void.
            let current = self.nodes[from].incarnation == envelope.sender_incarnation
                && self.nodes[to].incarnation == envelope.receiver_incarnation;
            match payload.body {
                Body::Membership(message) => {
                    if !current || self.config.topology == Topology::Star {
                        continue;
                    }
                    let node = &mut self.nodes[to];
                    let before = node.view.active().clone();
                    let out = node.view.handle(&payload.sender, message, &mut node.rng);
                    if *node.view.active() != before {
                        self.overlay_version += 1;
                    }
                    self.send_membership(to, out, now)?;
                }
                Body::Ack { .. } if !current => continue,
                _ => {
                    let node = &mut self.nodes[to];
                    let peers = node.view.active().clone();
                    let handled = node
                        .dissemination
                        .handle(&mut node.store, &payload, &peers)?;
                    if handled.changed
                        && payload
                            .body
                            .variable()
                            .is_some_and(|v| v.as_str() == WORKFLOW)
                    {
                        self.phases[to] = None;
                    }
                    if let Some(reply) = handled.reply {
                        self.send(to, reply, now)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn event(&mut self, now: u64) {
        self.last_event = Some(now);
        self.event_this_tick = true;
        self.converged_at = None;
    }

    fn act(&mut self, now: u64) -> Result<(), SimError> {
        let expected_total = self.config.expected_total();
        for i in 0..self.nodes.len() {
            let step = self.nodes[i].step(&self.expected);
            if let Step::Work(task) = step {
                self.check_barrier(i, task);
                match task {
                    TASK_EVENTS => self.generate(i, now)?,
                    TASK_CONVERGENCE => {
                        if scenario::grand_total(&self.nodes[i].store, &self.ads) == expected_total
                        {
                            self.mark(i, task, now);
                        }
                    }
                    // Metrics aggregation and shutdown have no local work in
                    // the simulator: the sink is shared and flushed at the end.
                    _ => self.mark(i, task, now),
                }
            }
            self.fire_triggers(i, now)?;
        }
        Ok(())
    }

    fn check_barrier(&mut self, i: usize, task: TaskIndex) {
        let wf = self.nodes[i].workflow();
        if (0..task.0).any(|k| !wf.is_task_complete(TaskIndex(k), &self.expected)) {
            self.trace.barrier_violations += 1;
        }
    }

    fn mark(&mut self, i: usize, task: TaskIndex, now: u64) {
        self.nodes[i].mark(task);
        self.phases[i] = None;
        self.marks[task.0]
            .entry(self.nodes[i].slot.clone())
            .or_insert(now);
    }

    fn generate(&mut self, i: usize, now: u64) -> Result<(), SimError> {
        let quota = self.config.impressions_per_client;
        let start = self.started_at.expect("acting implies started");
        let node = &mut self.nodes[i];
        if node.role == Role::Server || node.impressions_done >= quota {
            self.mark(i, TASK_EVENTS, now);
            return Ok(());
        }
        let due = start
            + node.impression_offset
            + node.impressions_done * self.config.impression_interval;
        if now < due {
            return Ok(());
        }
        let (variable, delta) =
            scenario::client_impression(&mut node.store, &node.actor, &mut node.workload_rng)?;
        node.dissemination.record_local(&variable, delta);
        node.impressions_done += 1;
        let finished = node.impressions_done >= quota;
        if self.trace.connected_at.is_none_or(|c| now < c) {
            self.trace.impressions_before_connected += 1;
        }
        self.trace.first_impression_at.get_or_insert(now);
        self.event(now);
        if finished {
            self.mark(i, TASK_EVENTS, now);
        }
        Ok(())
    }

    fn fire_triggers(&mut self, i: usize, now: u64) -> Result<(), SimError> {
        let node = &mut self.nodes[i];
        let fired = node.store.take_fired();
        let Some(triggers) = node.triggers.as_ref() else {
            return Ok(());
        };
        if fired.is_empty() {
            return Ok(());
        }
        let retired = triggers.retire(&mut node.store, &fired)?;
        let ads_id = VarId::new(ADS);
        let mut records = Vec::new();
        for r in retired {
            node.dissemination.record_local(&ads_id, r.delta);
            records.push(RetirementRecord {
                tick: now,
                node: node.actor.to_string(),
                ad_id: r.ad_id,
                local_count: r.local_count,
                threshold: self.config.threshold,
            });
        }
        for r in records {
            info!(
                "tick {now}: {} retired {} at local count {}",
                r.node, r.ad_id, r.local_count
            );
            if r.local_count < r.threshold {
                self.trace.retirement_violations += 1;
            }
            self.first_retirement.entry(r.ad_id.clone()).or_insert(now);
            self.trace.retirements.push(r);
            self.event(now);
        }
        Ok(())
    }

    fn propagate(&mut self, now: u64) -> Result<(), SimError> {
        for i in 0..self.nodes.len() {
            let node = &mut self.nodes[i];
            let peers = node.view.active().clone();
            let out = node.dissemination.tick(&node.store, &peers);
            for payload in out {
                self.send(i, payload, now)?;
            }
        }
        Ok(())
    }

    fn membership(&mut self, now: u64) -> Result<(), SimError> {
        if let Some(&i) = self.join_order.get(self.next_join) {
            self.next_join += 1;
            let contact = ActorId::new(SERVER);
            let node = &mut self.nodes[i];
            node.joined = true;
            let out = node.view.join_via(&contact, &mut node.rng);
            self.overlay_version += 1;
            self.send_membership(i, out, now)?;
        }
        let shuffle = now.is_multiple_of(self.config.hpv.shuffle_interval_ticks);
        for i in 0..self.nodes.len() {
            let node = &mut self.nodes[i];
            if !node.joined {
                continue;
            }
            let mut out = node
                .view
                .rejoin_if_isolated(&self.expected, &mut node.rng)?;
            if !out.is_empty() {
                self.overlay_version += 1;
            }
            if shuffle {
                out.extend(node.view.shuffle(&mut node.rng));
                out.extend(node.view.maintain(&mut node.rng));
            }
            self.send_membership(i, out, now)?;
        }
        Ok(())
    }

    fn churn(&mut self, now: u64, probability: f64) -> Result<(), SimError> {
        for i in 1..self.nodes.len() {
            if !self.world_rng.random_bool(probability) || self.nodes[i].view.active().is_empty() {
                continue;
            }
            self.replace(i, now)?;
        }
        Ok(())
    }

    /// Kills the node in slot `i` and starts a fresh incarnation in its place.
    fn replace(&mut self, i: usize, now: u64) -> Result<(), SimError> {
        if !now.is_multiple_of(self.config.propagation_interval) {
            // Ship what the victim has not sent yet so no event dies with it.
            let node = &mut self.nodes[i];
            let peers = node.view.active().clone();
            let out = node.dissemination.tick(&node.store, &peers);
            for payload in out {
                self.send(i, payload, now)?;
            }
        }
        let (ads, contracts) = scenario::default_catalog(
            self.config.ad_count,
            self.config.contracts_per_ad,
            self.config.threshold,
        );
        let old = &self.nodes[i];
        let slot = old.slot.clone();
        let mut fresh = SimNode::new(
            &self.config,
            slot.clone(),
            old.role,
            old.incarnation + 1,
            &ads,
            &contracts,
        );
        fresh.impressions_done = old.impressions_done;
        fresh.impression_offset = old.impression_offset;
        fresh.joined = true;
        self.retired_max_buffer = self
            .retired_max_buffer
            .max(old.dissemination.max_buffer_len());
        self.retired_ignored_acks += old.dissemination.ignored_acks();
        info!("tick {now}: replacing {} with {}", old.actor, fresh.actor);
        self.churn_events.push(ChurnEvent {
            tick: now,
            slot: slot.to_string(),
            incarnation: fresh.incarnation,
        });
        self.observed[i] = Observed {
            displayable: scenario::displayable(&fresh.store).into_iter().collect(),
            dropped: BTreeSet::new(),
        };
        self.nodes[i] = fresh;
        self.phases[i] = None;
        self.overlay_version += 1;
        // The fresh replica starts empty, so agreement has to be re-reached.
        self.converged_at = None;

        for j in 0..self.nodes.len() {
            if j == i || !self.nodes[j].view.active().contains(&slot) {
                continue;
            }
            let node = &mut self.nodes[j];
            let out = node.view.on_failure(&slot, &mut node.rng);
            self.send_membership(j, out, now)?;
        }
        let node = &mut self.nodes[i];
        let out = node
            .view
            .rejoin_if_isolated(&self.expected, &mut node.rng)?;
        self.send_membership(i, out, now)
    }

    fn current_diameter(&mut self) -> Option<usize> {
        if let Some((version, d)) = self.diameter_cache {
            if version == self.overlay_version {
                return d;
            }
        }
        let d = self.overlay().restrict(&self.expected).diameter().ok();
        self.diameter_cache = Some((self.overlay_version, d));
        d
    }

    fn observe(&mut self, now: u64) -> Result<(), SimError> {
        if self.started_at.is_none() {
            let all_joined = self.next_join >= self.join_order.len();
            if all_joined && is_single_component(self.nodes.iter().map(|n| &n.view), &self.expected)
            {
                info!("tick {now}: overlay connected, starting");
                self.trace.connected_at = Some(now);
                self.started_at = Some(now + 1);
            } else if now > self.bootstrap_limit() {
                return Err(SimError::BootstrapTimeout { tick: now });
            }
        }

        if self.event_this_tick {
            self.diameter_at_event = self.current_diameter();
        }
        if self.started_at.is_some() && now.is_multiple_of(self.config.sample_interval) {
            let d = self.current_diameter();
            self.diameter_samples.push((now, d));
            if self.config.overlay_dump {
                for node in &self.nodes {
                    let peers: Vec<&str> = node.view.active().iter().map(ActorId::as_str).collect();
                    self.overlay_dump
                        .push(format!("{now},{},{}", node.slot, peers.join(";")));
                }
            }
        }

        for (i, node) in self.nodes.iter().enumerate() {
            let now_shown: BTreeSet<String> =
                scenario::displayable(&node.store).into_iter().collect();
            let seen = &mut self.observed[i];
            if now_shown == seen.displayable {
                continue;
            }
            for ad in seen.displayable.difference(&now_shown) {
                if self.first_retirement.get(ad).is_none_or(|&t| t > now) {
                    self.trace.premature_removals += 1;
                }
                seen.dropped.insert(ad.clone());
            }
            for ad in now_shown.difference(&seen.displayable) {
                if seen.dropped.contains(ad) {
                    self.trace.reappearances += 1;
                }
            }
            seen.displayable = now_shown;
        }

        let generated: u64 = self.nodes.iter().map(|n| n.impressions_done).sum();
        if generated == self.config.expected_total()
            && self.converged_at.is_none()
            && self.oracle_converged()
        {
            debug!("tick {now}: replicas identical");
            self.converged_at = Some(now);
        }

        if let Some(start) = self.started_at {
            let all_done = self
                .nodes
                .iter()
                .all(|n| n.step(&self.expected) == Step::Done);
            if all_done && self.converged_at.is_some() {
                info!("tick {now}: all nodes done");
                self.finished_at = Some(now);
            } else if now > start + self.config.timeout_factor * self.config.duration {
                return Err(self.phase_timeout(now));
            }
        }
        Ok(())
    }

    fn bootstrap_limit(&self) -> u64 {
        20 * self.nodes.len() as u64 + 1000
    }

    fn phase_timeout(&self, now: u64) -> SimError {
        let mut union = self.nodes[0].workflow().clone();
        for n in &self.nodes[1..] {
            crate::crdt::Lattice::join_assign(&mut union, n.workflow());
        }
        let task = (0..EXPERIMENT_TASKS.len())
            .find(|&k| !union.is_task_complete(TaskIndex(k), &self.expected))
            .unwrap_or(EXPERIMENT_TASKS.len() - 1);
        SimError::PhaseTimeout {
            task: EXPERIMENT_TASKS[task],
            tick: now,
            missing: union
                .missing(TaskIndex(task), &self.expected)
                .iter()
                .map(ToString::to_string)
                .collect(),
        }
    }

    fn all_marked(&self, task: usize) -> Option<u64> {
        let marks = &self.marks[task];
        if marks.len() < self.expected.len() {
            return None;
        }
        marks.values().max().copied()
    }

    /// Finalises the trace checks and builds the report.
    pub fn into_report(self) -> Result<Report, SimError> {
        let mut trace = self.trace.clone();
        for (&phase, &first) in self.sink.first_tick_of_phase() {
            if phase < 2 {
                continue;
            }
            let gate = usize::from(phase) - 2;
            if self.all_marked(gate).is_none_or(|t| t > first) {
                trace.phase_order_violations += 1;
            }
        }
        let expected_total = self.config.expected_total();
        trace.conservation = self
            .nodes
            .iter()
            .all(|n| scenario::grand_total(&n.store, &self.ads) == expected_total);
        trace.derived_consistent = self.nodes.iter().all(|n| n.store.derived_consistent());

        let reference = &self.nodes[0].store;
        let ad_counts = self
            .ads
            .iter()
            .map(|ad| {
                let value = reference
                    .state(ad.counter().as_str())
                    .and_then(|s| s.as_gcounter())
                    .map_or(0, |c| c.value());
                (ad.id.clone(), value)
            })
            .collect();
        let spillover = reference
            .state(scenario::SPILLOVER)
            .and_then(|s| s.as_gcounter())
            .map_or(0, |c| c.value());
        let max_buffer_len = self
            .nodes
            .iter()
            .map(|n| n.dissemination.max_buffer_len())
            .max()
            .unwrap_or(0)
            .max(self.retired_max_buffer);
        let ignored_acks = self
            .nodes
            .iter()
            .map(|n| n.dissemination.ignored_acks())
            .sum::<u64>()
            + self.retired_ignored_acks;
        let convergence_marked_at = self.marks[TASK_CONVERGENCE.0].values().max().copied();

        let instrumented_bytes = self.sink.instrumented_bytes();
        let control_bytes = self.sink.control_bytes();
        let bytes_by_kind = self.sink.by_kind().clone();
        let cumulative_bytes = self.sink.cumulative().to_vec();
        let rows = self.sink.rows();
        let (checksum, records) = self.sink.finish()?;
        Ok(Report {
            run_id: self.config.run_id(),
            started_at: self.started_at.unwrap_or(self.tick),
            finished_at: self.finished_at.unwrap_or(self.tick),
            final_event_tick: self.last_event,
            converged_at: self.converged_at,
            diameter_at_final_event: self.diameter_at_event,
            diameter_samples: self.diameter_samples,
            convergence_marked_at,
            instrumented_bytes,
            control_bytes,
            bytes_by_kind,
            cumulative_bytes,
            rows,
            checksum,
            ad_counts,
            spillover,
            max_buffer_len,
            ignored_acks,
            churn_events: self.churn_events,
            trace,
            overlay_dump: self.overlay_dump,
            records,
            config: self.config,
        })
    }
}

/// Runs `config` to completion, streaming metrics CSV to `metrics` if given.
pub fn run_experiment(
    config: ExperimentConfig,
    metrics: Option<Box<dyn Write + Send>>,
) -> Result<Report, SimError> {
    Simulation::new(config, metrics, false)?.run()
}
