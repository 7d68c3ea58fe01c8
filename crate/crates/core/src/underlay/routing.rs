//! Hop-count shortest-path routing between agents.

use std::collections::BTreeMap;
use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{AgentId, NodeId, OverlaySpec, UnderlayGraph};

/// An underlay path serving one directed overlay link.
#[derive(Debug, Clone, PartialEq)]
pub struct Route<F> {
    /// Node sequence from source to destination (inclusive).
    pub nodes: Vec<NodeId>,
    /// Underlay link ids along the path, `nodes.len() - 1` of them.
    pub links: Vec<usize>,
    /// Total propagation delay of the path in seconds.
    pub delay: F,
}

impl<F> Route<F> {
    pub fn hops(&self) -> usize {
        self.links.len()
    }
}

/// Routes for every ordered agent pair.
#[derive(Debug, Clone)]
pub struct RoutingTable<F> {
    routes: BTreeMap<(AgentId, AgentId), Route<F>>,
}

impl<F: Scalar> RoutingTable<F> {
    pub fn route(&self, src: AgentId, dst: AgentId) -> Option<&Route<F>> {
        self.routes.get(&(src, dst))
    }

    /// Propagation delay of the directed overlay link `(src, dst)`.
    pub fn delay(&self, src: AgentId, dst: AgentId) -> Option<F> {
        self.route(src, dst).map(|r| r.delay)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(AgentId, AgentId), &Route<F>)> {
        self.routes.iter()
    }
}

/// Computes a minimum-hop route for every ordered agent pair.
///
/// Ties between equal-hop paths are broken toward the lexicographically
/// smallest node-id sequence, so the table is a pure function of the
/// scenario. Returns an error naming the first agent pair with no connecting
/// route.
pub fn shortest_path_routing<F: Scalar>(
    underlay: &UnderlayGraph<F>,
    overlay: &OverlaySpec,
) -> Result<RoutingTable<F>> {
    let n = underlay.num_nodes();
    let m = overlay.num_agents();

    // Reverse adjacency once: predecessors[v] lists link ids ending at v.
    let mut predecessors: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (idx, link) in underlay.links().iter().enumerate() {
        predecessors[link.dst].push(idx);
    }

    let mut routes = BTreeMap::new();
    for dst_agent in 0..m {
        let target = overlay.agent_node(dst_agent);
        let dist = reverse_bfs(underlay, &predecessors, target);
        for src_agent in 0..m {
            if src_agent == dst_agent {
                continue;
            }
            let source = overlay.agent_node(src_agent);
            if dist[source] == usize::MAX {
                return Err(Error::NoRoute {
                    from: underlay.node_name(source).to_string(),
                    to: underlay.node_name(target).to_string(),
                });
            }
            routes.insert(
                (src_agent, dst_agent),
                walk_lexicographic(underlay, &dist, source, target),
            );
        }
    }
    Ok(RoutingTable { routes })
}

/// Distance (in hops) from every node *to* `target`, following link
/// directions.
fn reverse_bfs<F: Scalar>(
    underlay: &UnderlayGraph<F>,
    predecessors: &[Vec<usize>],
    target: NodeId,
) -> Vec<usize> {
    let mut dist = vec![usize::MAX; underlay.num_nodes()];
    dist[target] = 0;
    let mut queue = VecDeque::from([target]);
    while let Some(v) = queue.pop_front() {
        for &link_id in &predecessors[v] {
            let u = underlay.link(link_id).src;
            if dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    dist
}

/// Greedily walks from `source` toward `target` along the distance field,
/// always taking the smallest-id next node. Because every candidate next hop
/// has the same remaining distance, this yields the lexicographically
/// smallest minimum-hop node sequence.
fn walk_lexicographic<F: Scalar>(
    underlay: &UnderlayGraph<F>,
    dist: &[usize],
    source: NodeId,
    target: NodeId,
) -> Route<F> {
    let mut nodes = vec![source];
    let mut links = Vec::new();
    let mut delay = F::zero();
    let mut current = source;
    while current != target {
        // Outgoing links are pre-sorted by destination id, so the first
        // admissible one is the lexicographic choice.
        let link_id = underlay
            .outgoing(current)
            .iter()
            .copied()
            .find(|&l| {
                let next = underlay.link(l).dst;
                dist[next] != usize::MAX && dist[next] + 1 == dist[current]
            })
            .expect("distance field admits a next hop on every shortest path");
        let link = underlay.link(link_id);
        delay += link.delay;
        links.push(link_id);
        nodes.push(link.dst);
        current = link.dst;
    }
    Route { nodes, links, delay }
}
