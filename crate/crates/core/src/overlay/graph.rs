use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{MembershipView, OverlayError};
use crate::encoding::ActorId;

/// Undirected graph over nodes, with an edge wherever either endpoint has
/// the other in its active view.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OverlayGraph {
    adjacency: BTreeMap<ActorId, BTreeSet<ActorId>>,
}

impl OverlayGraph {
    pub fn from_views<'a>(views: impl IntoIterator<Item = &'a MembershipView>) -> Self {
        let mut graph = OverlayGraph::default();
        for view in views {
            graph.add_node(view.owner().clone());
            for peer in view.active() {
                graph.add_edge(view.owner(), peer);
            }
        }
        graph
    }

    pub fn add_node(&mut self, node: ActorId) {
        self.adjacency.entry(node).or_default();
    }

    pub fn add_edge(&mut self, a: &ActorId, b: &ActorId) {
        if a == b {
            return;
        }
        self.adjacency
            .entry(a.clone())
            .or_default()
            .insert(b.clone());
        self.adjacency
            .entry(b.clone())
            .or_default()
            .insert(a.clone());
    }

    /// The subgraph induced by `nodes`. Nodes absent from `self` appear
    /// isolated.
    pub fn restrict(&self, nodes: &BTreeSet<ActorId>) -> OverlayGraph {
        let adjacency = nodes
            .iter()
            .map(|n| {
                let peers = self
                    .adjacency
                    .get(n)
                    .map(|p| p.intersection(nodes).cloned().collect())
                    .unwrap_or_default();
                (n.clone(), peers)
            })
            .collect();
        OverlayGraph { adjacency }
    }

    pub fn nodes(&self) -> impl Iterator<Item = &ActorId> {
        self.adjacency.keys()
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.values().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, node: &ActorId) -> Option<&BTreeSet<ActorId>> {
        self.adjacency.get(node)
    }

    pub fn degree(&self, node: &ActorId) -> usize {
        self.adjacency.get(node).map_or(0, BTreeSet::len)
    }

    pub fn is_connected(&self) -> bool {
        let index = self.indexed();
        match index.first() {
            None => true,
            Some(_) => bfs(&index, 0).iter().all(Option::is_some),
        }
    }

    /// Longest shortest path, by breadth-first search from every node.
    pub fn diameter(&self) -> Result<usize, OverlayError> {
        let index = self.indexed();
        let mut longest = 0;
        for source in 0..index.len() {
            for d in bfs(&index, source) {
                longest = longest.max(d.ok_or(OverlayError::Disconnected)?);
            }
        }
        Ok(longest)
    }

    fn indexed(&self) -> Vec<Vec<usize>> {
        let position: BTreeMap<&ActorId, usize> = self
            .adjacency
            .keys()
            .enumerate()
            .map(|(i, n)| (n, i))
            .collect();
        self.adjacency
            .values()
            .map(|peers| {
                peers
                    .iter()
                    .filter_map(|p| position.get(p).copied())
                    .collect()
            })
            .collect()
    }
}

fn bfs(adjacency: &[Vec<usize>], source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adjacency.len()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let next = dist[u].expect("queued nodes have a distance") + 1;
        for &v in &adjacency[u] {
            if dist[v].is_none() {
                dist[v] = Some(next);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Views for a star: each client's active view is the server, the server's
/// is every client.
pub fn star_views(
    server: &ActorId,
    clients: &BTreeSet<ActorId>,
) -> Result<Vec<MembershipView>, OverlayError> {
    if clients.is_empty() {
        return Err(OverlayError::NoClients);
    }
    if clients.contains(server) {
        return Err(OverlayError::ServerIsClient(server.clone()));
    }
    let mut views = vec![MembershipView::fixed(server.clone(), clients.clone())];
    views.extend(
        clients
            .iter()
            .map(|c| MembershipView::fixed(c.clone(), BTreeSet::from([server.clone()]))),
    );
    Ok(views)
}

pub fn build_star(
    server: &ActorId,
    clients: &BTreeSet<ActorId>,
) -> Result<OverlayGraph, OverlayError> {
    Ok(OverlayGraph::from_views(&star_views(server, clients)?))
}

/// True iff the overlay over exactly `expected` is one connected component.
pub fn is_single_component<'a>(
    views: impl IntoIterator<Item = &'a MembershipView>,
    expected: &BTreeSet<ActorId>,
) -> bool {
    !expected.is_empty()
        && OverlayGraph::from_views(views)
            .restrict(expected)
            .is_connected()
}

pub fn diameter(graph: &OverlayGraph) -> Result<usize, OverlayError> {
    graph.diameter()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(names: &[&str]) -> BTreeSet<ActorId> {
        names.iter().map(ActorId::new).collect()
    }

    #[test]
    fn star_shapes() {
        let server = ActorId::new("s");
        let g = build_star(&server, &ids(&["a", "b", "c"])).unwrap();
        assert_eq!(g.edge_count(), 3);
        assert_eq!(g.diameter(), Ok(2));
        let g = build_star(&server, &ids(&["a"])).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.diameter(), Ok(1));
        assert_eq!(
            build_star(&server, &BTreeSet::new()),
            Err(OverlayError::NoClients)
        );
        assert_eq!(
            build_star(&server, &ids(&["s"])),
            Err(OverlayError::ServerIsClient(server))
        );
    }

    #[test]
    fn disjoint_cliques() {
        let mut g = OverlayGraph::default();
        for (a, b) in [("a", "b"), ("b", "c"), ("a", "c"), ("x", "y")] {
            g.add_edge(&ActorId::new(a), &ActorId::new(b));
        }
        assert!(!g.is_connected());
        assert_eq!(g.diameter(), Err(OverlayError::Disconnected));
    }

    #[test]
    fn restrict_reports_missing_nodes() {
        let server = ActorId::new("s");
        let views = star_views(&server, &ids(&["a", "b"])).unwrap();
        assert!(is_single_component(&views, &ids(&["s", "a", "b"])));
        assert!(!is_single_component(
            &views,
            &ids(&["s", "a", "b", "ghost"])
        ));
        // Without the hub the clients are not connected to each other.
        assert!(!is_single_component(&views, &ids(&["a", "b"])));
    }
}
