//! Anti-entropy over a fixed topology with an adversarial network: random
//! reordering, duplication and loss while updates happen, then reliable
//! rounds until quiet.

use std::collections::{BTreeMap, BTreeSet};

use lasp_core::crdt::{Element, Mutation, Variant};
use lasp_core::dataflow::Store;
use lasp_core::dissemination::{Body, Disseminator, Mode, Payload};
use lasp_core::ActorId;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NODES: usize = 5;

fn id(i: usize) -> ActorId {
    ActorId::new(format!("p{i}"))
}

/// A ring with one chord, so some deltas arrive over two paths.
fn peers(i: usize) -> BTreeSet<ActorId> {
    let mut p = BTreeSet::from([id((i + 1) % NODES), id((i + NODES - 1) % NODES)]);
    if i == 0 {
        p.insert(id(2));
    }
    if i == 2 {
        p.insert(id(0));
    }
    p
}

struct World {
    stores: Vec<Store>,
    dis: Vec<Disseminator>,
    inflight: Vec<Payload>,
}

impl World {
    fn new(mode: Mode) -> Self {
        let stores = (0..NODES)
            .map(|_| {
                let mut s = Store::new();
                s.declare("hits", Variant::GCounter).unwrap();
                s.declare("tags", Variant::AWSet).unwrap();
                s
            })
            .collect();
        let dis = (0..NODES)
            .map(|i| Disseminator::new(id(i), mode, 0, 3))
            .collect();
        Self {
            stores,
            dis,
            inflight: Vec::new(),
        }
    }

    fn local(&mut self, i: usize, var: &str, m: Mutation) {
        let delta = self.stores[i].update(var, &m).unwrap();
        self.dis[i].record_local(&lasp_core::VarId::new(var), delta);
    }

    fn tick_all(&mut self) {
        for i in 0..NODES {
            let out = self.dis[i].tick(&self.stores[i], &peers(i));
            self.inflight.extend(out);
        }
    }

    fn deliver(&mut self, p: Payload) {
        let to: usize = p.receiver.as_str()[1..].parse().unwrap();
        let handled = self.dis[to]
            .handle(&mut self.stores[to], &p, &peers(to))
            .unwrap();
        self.inflight.extend(handled.reply);
    }

    fn deliver_all(&mut self) {
        while !self.inflight.is_empty() {
            let batch = std::mem::take(&mut self.inflight);
            for p in batch {
                self.deliver(p);
            }
        }
    }

    fn converged(&self) -> bool {
        self.stores[1..].iter().all(|s| {
            ["hits", "tags"]
                .iter()
                .all(|v| s.state(v) == self.stores[0].state(v))
        })
    }
}

fn run(mode: Mode, seed: u64, loss: f64) -> (World, u64, BTreeSet<Element>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut w = World::new(mode);
    let mut total = 0;
    for _round in 0..12 {
        for _ in 0..rng.random_range(0..4) {
            let i = rng.random_range(0..NODES);
            match rng.random_range(0..3) {
                0 => {
                    let amount = rng.random_range(1..5);
                    total += amount;
                    w.local(
                        i,
                        "hits",
                        Mutation::Increment {
                            actor: id(i),
                            amount,
                        },
                    );
                }
                1 => w.local(
                    i,
                    "tags",
                    Mutation::Add {
                        actor: id(i),
                        element: Element::Int(rng.random_range(0..5)),
                    },
                ),
                _ => w.local(
                    i,
                    "tags",
                    Mutation::Remove {
                        element: Element::Int(rng.random_range(0..5)),
                    },
                ),
            }
        }
        w.tick_all();
        let mut batch = std::mem::take(&mut w.inflight);
        batch.shuffle(&mut net);
        for p in batch {
            if net.random_bool(loss) {
                continue;
            }
            if net.random_bool(0.2) {
                w.deliver(p.clone());
            }
            w.deliver(p);
        }
        // Replies to this round race with the next one.
        w.inflight.shuffle(&mut net);
    }
    w.deliver_all();
    for _ in 0..10 {
        if w.converged() {
            break;
        }
        w.tick_all();
        w.deliver_all();
    }
    let tags = w.stores[0]
        .state("tags")
        .unwrap()
        .as_awset()
        .unwrap()
        .elements()
        .cloned()
        .collect();
    (w, total, tags)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn delta_mode_converges_despite_loss_and_reordering(seed in any::<u64>(), loss in 0.0f64..0.4) {
        let (w, total, _) = run(Mode::Delta, seed, loss);
        prop_assert!(w.converged());
        let value = w.stores[0].state("hits").unwrap().as_gcounter().unwrap().value();
        prop_assert_eq!(value, total);
    }

    #[test]
    fn state_and_delta_modes_reach_the_same_replica(seed in any::<u64>()) {
        let (ws, total_s, tags_s) = run(Mode::State, seed, 0.0);
        let (wd, total_d, tags_d) = run(Mode::Delta, seed, 0.0);
        prop_assert!(ws.converged() && wd.converged());
        prop_assert_eq!(total_s, total_d);
        prop_assert_eq!(tags_s, tags_d);
        prop_assert_eq!(ws.stores[0].state("hits"), wd.stores[0].state("hits"));
    }
}

#[test]
fn buffers_drain_once_everyone_acknowledges() {
    let mut w = World::new(Mode::Delta);
    for i in 0..NODES {
        w.local(
            i,
            "hits",
            Mutation::Increment {
                actor: id(i),
                amount: 1,
            },
        );
    }
    for _ in 0..6 {
        w.tick_all();
        w.deliver_all();
    }
    assert!(w.converged());
    // One more round lets the last acks compact every buffer.
    w.tick_all();
    w.deliver_all();
    w.tick_all();
    for d in &w.dis {
        let len = d
            .buffer(&lasp_core::VarId::new("hits"))
            .map_or(0, |b| b.len());
        assert_eq!(len, 0, "buffer not compacted");
    }
}

#[test]
fn quiet_delta_rounds_send_nothing() {
    let mut w = World::new(Mode::Delta);
    w.local(
        0,
        "hits",
        Mutation::Increment {
            actor: id(0),
            amount: 2,
        },
    );
    for _ in 0..6 {
        w.tick_all();
        w.deliver_all();
    }
    w.tick_all();
    let kinds: BTreeMap<&str, usize> = w.inflight.iter().fold(BTreeMap::new(), |mut m, p| {
        *m.entry(p.kind()).or_default() += 1;
        m
    });
    assert!(
        w.inflight
            .iter()
            .all(|p| !matches!(p.body, Body::FullState { .. })),
        "{kinds:?}"
    );
    assert!(w.inflight.is_empty(), "{kinds:?}");
}
