use std::collections::{BTreeSet, VecDeque};

use lasp_core::overlay::{build_star, HpvMessage, HpvParams, MembershipView, OverlayGraph};
use lasp_core::ActorId;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn node(i: usize) -> ActorId {
    ActorId::new(format!("n{i:03}"))
}

/// All-pairs shortest paths by Floyd-Warshall; `None` if disconnected.
fn floyd_diameter(n: usize, edges: &[(usize, usize)]) -> Option<usize> {
    const INF: usize = usize::MAX / 4;
    let mut d = vec![vec![INF; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for &(a, b) in edges {
        if a != b {
            d[a][b] = 1;
            d[b][a] = 1;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    let max = d.iter().flatten().copied().max().unwrap_or(0);
    (max < INF).then_some(max)
}

proptest! {
    #[test]
    fn diameter_matches_floyd_warshall(n in 1usize..14, edges in prop::collection::vec((0usize..14, 0usize..14), 0..40)) {
        let edges: Vec<(usize, usize)> = edges.into_iter().filter(|&(a, b)| a < n && b < n).collect();
        let mut g = OverlayGraph::default();
        for i in 0..n {
            g.add_node(node(i));
        }
        for &(a, b) in &edges {
            g.add_edge(&node(a), &node(b));
        }
        let expected = floyd_diameter(n, &edges);
        prop_assert_eq!(g.diameter().ok(), expected);
        prop_assert_eq!(g.is_connected(), expected.is_some());
    }
}

#[test]
fn star_has_diameter_two() {
    let clients: BTreeSet<ActorId> = (1..=9).map(node).collect();
    let g = build_star(&node(0), &clients).unwrap();
    assert_eq!(g.diameter().unwrap(), 2);
    assert_eq!(g.degree(&node(0)), 9);
    assert_eq!(g.edge_count(), 9);
}

/// Synchronous network of HyParView nodes with FIFO delivery.
struct Net {
    views: Vec<MembershipView>,
    rngs: Vec<ChaCha8Rng>,
    alive: Vec<bool>,
    queue: VecDeque<(usize, ActorId, HpvMessage)>,
}

impl Net {
    fn new(n: usize, seed: u64) -> Self {
        Self {
            views: (0..n)
                .map(|i| MembershipView::new(node(i), HpvParams::default()))
                .collect(),
            rngs: (0..n)
                .map(|i| ChaCha8Rng::seed_from_u64(seed * 1000 + i as u64))
                .collect(),
            alive: vec![true; n],
            queue: VecDeque::new(),
        }
    }

    fn index(id: &ActorId) -> usize {
        id.as_str()[1..].parse().unwrap()
    }

    fn enqueue(&mut self, from: usize, out: Vec<(ActorId, HpvMessage)>) {
        for (to, m) in out {
            self.queue.push_back((Net::index(&to), node(from), m));
        }
    }

    fn drain(&mut self) {
        let mut budget = 1_000_000;
        while let Some((to, from, m)) = self.queue.pop_front() {
            budget -= 1;
            assert!(budget > 0, "membership traffic did not settle");
            let sender = Net::index(&from);
            if !self.alive[to] {
                // The sender's connection attempt fails.
                if self.alive[sender] {
                    let out = self.views[sender].on_failure(&node(to), &mut self.rngs[sender]);
                    self.enqueue(sender, out);
                }
                continue;
            }
            let out = self.views[to].handle(&from, m, &mut self.rngs[to]);
            self.enqueue(to, out);
        }
    }

    fn round(&mut self) {
        for i in 0..self.views.len() {
            if !self.alive[i] {
                continue;
            }
            let mut out = self.views[i].shuffle(&mut self.rngs[i]);
            out.extend(self.views[i].maintain(&mut self.rngs[i]));
            self.enqueue(i, out);
        }
        self.drain();
    }

    fn graph(&self) -> OverlayGraph {
        let live: BTreeSet<ActorId> = (0..self.views.len())
            .filter(|&i| self.alive[i])
            .map(node)
            .collect();
        OverlayGraph::from_views(self.views.iter().filter(|v| live.contains(v.owner())))
            .restrict(&live)
    }

    fn assert_healthy(&self) {
        for (i, v) in self.views.iter().enumerate() {
            if !self.alive[i] {
                continue;
            }
            assert!(v.invariants_hold(), "{} violates view bounds", v.owner());
            assert!(!v.is_isolated(), "{} is isolated", v.owner());
            for peer in v.active() {
                let j = Net::index(peer);
                assert!(self.alive[j], "{} keeps dead {peer}", v.owner());
                assert!(
                    self.views[j].active().contains(v.owner()),
                    "{} -> {peer} is not symmetric",
                    v.owner()
                );
            }
        }
        assert!(self.graph().is_connected());
    }
}

fn bootstrap(n: usize, seed: u64) -> Net {
    let mut net = Net::new(n, seed);
    for i in 1..n {
        let out = net.views[i].join_via(&node(0), &mut net.rngs[i]);
        net.enqueue(i, out);
        net.drain();
    }
    for _ in 0..5 {
        net.round();
    }
    net
}

#[test]
fn sequential_joins_form_a_connected_symmetric_overlay() {
    for (n, seed) in [(8, 1), (32, 2), (64, 3), (128, 4)] {
        let net = bootstrap(n, seed);
        net.assert_healthy();
        let d = net.graph().diameter().unwrap();
        let bound = 2 * (n as f64).log2().ceil() as usize;
        assert!(d <= bound, "n={n}: diameter {d} above {bound}");
        let full = net.views.iter().filter(|v| v.active().len() >= 2).count();
        assert!(
            full * 10 >= n * 9,
            "n={n}: too many nodes with a single neighbour"
        );
    }
}

#[test]
fn overlay_heals_after_failures() {
    let mut net = bootstrap(64, 7);
    for victim in [5, 17, 23, 42, 51, 60] {
        net.alive[victim] = false;
        for i in 0..net.views.len() {
            if net.alive[i] && net.views[i].active().contains(&node(victim)) {
                let out = net.views[i].on_failure(&node(victim), &mut net.rngs[i]);
                net.enqueue(i, out);
            }
        }
        net.drain();
    }
    for _ in 0..10 {
        net.round();
    }
    // Passive views may still list the dead; active views must not.
    net.assert_healthy();
}
