//! Physical network model: the underlay graph, agent placement, and the
//! overlay links agents may use to exchange model parameters.
//!
//! Conventions used throughout the crate:
//! * underlay nodes and links are identified by their index in the scenario
//!   (declaration order);
//! * agents are identified by their index `0..m` and map to distinct
//!   underlay nodes;
//! * overlay links between agents come in two flavors: the *undirected*
//!   candidate set (canonical pairs `(i, j)` with `i < j`) used for topology
//!   design, and the *directed* pairs used for routing and scheduling.

mod categories;
mod routing;
mod scenario;

pub use categories::{
    derive_categories, perturb_view, Category, CategoryKey, CategoryTable, InferredView,
    Provenance, TomographyMode, ViewCategory,
};
pub use routing::{shortest_path_routing, Route, RoutingTable};
pub use scenario::{
    generate_scenario, load_scenario, scenario_from_file, GeneratorKind, Scenario, ScenarioFile,
    ScenarioLink,
};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use std::collections::BTreeSet;

/// Identifier of an underlay node (index into [`UnderlayGraph::node_names`]).
pub type NodeId = usize;
/// Identifier of an agent (index into [`OverlaySpec::agent_nodes`]).
pub type AgentId = usize;

/// A directed physical link with a bandwidth capacity and propagation delay.
#[derive(Debug, Clone, PartialEq)]
pub struct UnderlayLink<F> {
    pub src: NodeId,
    pub dst: NodeId,
    /// Capacity in bits per second. Strictly positive.
    pub capacity: F,
    /// Propagation delay in seconds. Non-negative.
    pub delay: F,
}

/// Directed multigraph-free underlay network.
#[derive(Debug, Clone)]
pub struct UnderlayGraph<F> {
    node_names: Vec<String>,
    links: Vec<UnderlayLink<F>>,
    /// Outgoing link indices per node, sorted by destination id.
    out: Vec<Vec<usize>>,
}

impl<F: Scalar> UnderlayGraph<F> {
    pub fn new(node_names: Vec<String>, links: Vec<UnderlayLink<F>>) -> Result<Self> {
        let n = node_names.len();
        if n == 0 {
            return Err(Error::Scenario("underlay has no nodes".into()));
        }
        let mut seen = BTreeSet::new();
        for (idx, link) in links.iter().enumerate() {
            if link.src >= n || link.dst >= n {
                return Err(Error::Scenario(format!(
                    "links[{idx}]: endpoint out of range (src {}, dst {}, {} nodes)",
                    link.src, link.dst, n
                )));
            }
            if link.src == link.dst {
                return Err(Error::Scenario(format!(
                    "links[{idx}]: self-loop at node '{}'",
                    node_names[link.src]
                )));
            }
            if !seen.insert((link.src, link.dst)) {
                return Err(Error::Scenario(format!(
                    "links[{idx}]: duplicate link {} -> {}",
                    node_names[link.src], node_names[link.dst]
                )));
            }
            if !(link.capacity > F::zero()) {
                return Err(Error::Scenario(format!(
                    "links[{idx}]: capacity must be positive, got {}",
                    link.capacity
                )));
            }
            if link.delay < F::zero() {
                return Err(Error::Scenario(format!(
                    "links[{idx}]: delay must be non-negative, got {}",
                    link.delay
                )));
            }
        }
        let mut out = vec![Vec::new(); n];
        for (idx, link) in links.iter().enumerate() {
            out[link.src].push(idx);
        }
        for list in &mut out {
            list.sort_by_key(|&idx| links[idx].dst);
        }
        Ok(Self { node_names, links, out })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_names.len()
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    pub fn node_name(&self, id: NodeId) -> &str {
        &self.node_names[id]
    }

    pub fn links(&self) -> &[UnderlayLink<F>] {
        &self.links
    }

    pub fn link(&self, id: usize) -> &UnderlayLink<F> {
        &self.links[id]
    }

    /// Outgoing link ids of `node`, sorted by destination node id.
    pub fn outgoing(&self, node: NodeId) -> &[usize] {
        &self.out[node]
    }

    /// Undirected degree of each node: number of distinct neighbors over
    /// either link direction. Used for agent placement heuristics.
    pub fn undirected_degrees(&self) -> Vec<usize> {
        let mut neigh: Vec<BTreeSet<NodeId>> = vec![BTreeSet::new(); self.num_nodes()];
        for link in &self.links {
            neigh[link.src].insert(link.dst);
            neigh[link.dst].insert(link.src);
        }
        neigh.into_iter().map(|s| s.len()).collect()
    }
}

/// Agents placed on the underlay plus the candidate overlay links between
/// them.
#[derive(Debug, Clone)]
pub struct OverlaySpec {
    agent_names: Vec<String>,
    agent_nodes: Vec<NodeId>,
    /// Canonical undirected candidate links: pairs `(i, j)` with `i < j`.
    base: Vec<(AgentId, AgentId)>,
}

impl OverlaySpec {
    pub fn new(
        agent_names: Vec<String>,
        agent_nodes: Vec<NodeId>,
        mut base: Vec<(AgentId, AgentId)>,
    ) -> Result<Self> {
        if agent_nodes.is_empty() {
            return Err(Error::Scenario("scenario defines no agents".into()));
        }
        if agent_names.len() != agent_nodes.len() {
            return Err(Error::Dimension("agent names/nodes length mismatch".into()));
        }
        let m = agent_nodes.len();
        let distinct: BTreeSet<_> = agent_nodes.iter().collect();
        if distinct.len() != m {
            return Err(Error::Scenario(
                "agents must be placed on distinct underlay nodes".into(),
            ));
        }
        for pair in base.iter_mut() {
            if pair.0 == pair.1 {
                return Err(Error::Scenario(format!(
                    "overlay link from agent {} to itself",
                    pair.0
                )));
            }
            if pair.0 > pair.1 {
                *pair = (pair.1, pair.0);
            }
            if pair.1 >= m {
                return Err(Error::Scenario(format!(
                    "overlay link ({}, {}) references an unknown agent (m = {m})",
                    pair.0, pair.1
                )));
            }
        }
        base.sort();
        base.dedup();
        Ok(Self { agent_names, agent_nodes, base })
    }

    /// Fully connected candidate set over `m` agents.
    pub fn clique(agent_names: Vec<String>, agent_nodes: Vec<NodeId>) -> Result<Self> {
        let m = agent_nodes.len();
        let mut base = Vec::with_capacity(m * (m.saturating_sub(1)) / 2);
        for i in 0..m {
            for j in i + 1..m {
                base.push((i, j));
            }
        }
        Self::new(agent_names, agent_nodes, base)
    }

    pub fn num_agents(&self) -> usize {
        self.agent_nodes.len()
    }

    pub fn agent_node(&self, agent: AgentId) -> NodeId {
        self.agent_nodes[agent]
    }

    pub fn agent_name(&self, agent: AgentId) -> &str {
        &self.agent_names[agent]
    }

    /// Canonical undirected candidate links, sorted.
    pub fn base_links(&self) -> &[(AgentId, AgentId)] {
        &self.base
    }

    /// Both directions of every candidate link, sorted.
    pub fn directed_links(&self) -> Vec<(AgentId, AgentId)> {
        let mut out = Vec::with_capacity(self.base.len() * 2);
        for &(i, j) in &self.base {
            out.push((i, j));
            out.push((j, i));
        }
        out.sort();
        out
    }

    pub fn contains_undirected(&self, i: AgentId, j: AgentId) -> bool {
        let key = if i < j { (i, j) } else { (j, i) };
        self.base.binary_search(&key).is_ok()
    }
}
