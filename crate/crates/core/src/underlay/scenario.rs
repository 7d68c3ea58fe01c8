//! Scenario files: the JSON description of an underlay, agent placement,
//! and candidate overlay, plus two built-in topology generators.
//!
//! A scenario is either explicit (`nodes`, `links`, `agents`) or generated
//! (`generator` + `seed`). Generated scenarios synthesize a connected mesh
//! with a fixed node/link budget and place agents at the lowest-degree
//! nodes, mimicking edge devices attached at the periphery:
//!
//! * `roofnet-like` — 33 nodes, 187 directed links of 1 Mbps (one link is
//!   unidirectional to hit the odd count), random geometric layout;
//! * `iab-like`    — 19 nodes on a hexagonal grid, 56 directed links of
//!   0.4 Gbps.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{OverlaySpec, UnderlayGraph, UnderlayLink};

/// On-disk scenario format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Named generator; mutually exclusive with explicit nodes/links/agents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nodes: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<ScenarioLink>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agents: Vec<ScenarioAgent>,
    #[serde(default)]
    pub base_topology: BaseTopology,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioLink {
    pub src: String,
    pub dst: String,
    pub capacity_bps: f64,
    #[serde(default)]
    pub delay_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioAgent {
    pub id: String,
    pub node: String,
}

/// Candidate overlay links: the full clique or an explicit pair list.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BaseTopology {
    Named(String),
    Pairs(Vec<(String, String)>),
}

impl Default for BaseTopology {
    fn default() -> Self {
        BaseTopology::Named("clique".into())
    }
}

/// A fully validated scenario ready for the pipeline.
#[derive(Debug, Clone)]
pub struct Scenario<F> {
    pub name: String,
    pub underlay: UnderlayGraph<F>,
    pub overlay: OverlaySpec,
    pub seed: u64,
}

/// Built-in generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    RoofnetLike,
    IabLike,
}

impl GeneratorKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "roofnet-like" => Ok(Self::RoofnetLike),
            "iab-like" => Ok(Self::IabLike),
            other => Err(Error::Scenario(format!(
                "unknown generator '{other}' (expected 'roofnet-like' or 'iab-like')"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::RoofnetLike => "roofnet-like",
            Self::IabLike => "iab-like",
        }
    }
}

/// Reads and validates a scenario from a JSON file.
pub fn load_scenario<F: Scalar>(path: &Path) -> Result<Scenario<F>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Scenario(format!("cannot read {}: {e}", path.display())))?;
    let file: ScenarioFile = serde_json::from_str(&text)
        .map_err(|e| Error::Scenario(format!("{}: {e}", path.display())))?;
    scenario_from_file(file)
}

/// Validates an in-memory scenario description.
pub fn scenario_from_file<F: Scalar>(file: ScenarioFile) -> Result<Scenario<F>> {
    let file = match &file.generator {
        Some(name) => {
            if !file.nodes.is_empty() || !file.links.is_empty() || !file.agents.is_empty() {
                return Err(Error::Scenario(
                    "'generator' and explicit nodes/links/agents are mutually exclusive".into(),
                ));
            }
            let kind = GeneratorKind::parse(name)?;
            let mut generated = generate_scenario(kind, file.seed.unwrap_or(0));
            if let Some(name) = file.name {
                generated.name = Some(name);
            }
            generated
        }
        None => file,
    };

    let seed = file.seed.unwrap_or(0);
    let name = file.name.unwrap_or_else(|| "scenario".into());

    if file.nodes.is_empty() {
        return Err(Error::Scenario("scenario defines no nodes".into()));
    }
    let mut node_index: BTreeMap<&str, usize> = BTreeMap::new();
    for (idx, node) in file.nodes.iter().enumerate() {
        if node_index.insert(node.as_str(), idx).is_some() {
            return Err(Error::Scenario(format!("nodes[{idx}]: duplicate node '{node}'")));
        }
    }
    let lookup = |field: String, name: &str| -> Result<usize> {
        node_index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Scenario(format!("{field}: unknown node '{name}'")))
    };

    let mut links = Vec::with_capacity(file.links.len());
    for (idx, link) in file.links.iter().enumerate() {
        links.push(UnderlayLink {
            src: lookup(format!("links[{idx}].src"), &link.src)?,
            dst: lookup(format!("links[{idx}].dst"), &link.dst)?,
            capacity: F::of(link.capacity_bps),
            delay: F::of(link.delay_s),
        });
    }
    let underlay = UnderlayGraph::new(file.nodes.clone(), links)?;

    if file.agents.is_empty() {
        return Err(Error::Scenario("scenario defines no agents".into()));
    }
    let mut agent_names = Vec::with_capacity(file.agents.len());
    let mut agent_nodes = Vec::with_capacity(file.agents.len());
    let mut agent_index: BTreeMap<&str, usize> = BTreeMap::new();
    for (idx, agent) in file.agents.iter().enumerate() {
        if agent_index.insert(agent.id.as_str(), idx).is_some() {
            return Err(Error::Scenario(format!(
                "agents[{idx}]: duplicate agent id '{}'",
                agent.id
            )));
        }
        agent_names.push(agent.id.clone());
        agent_nodes.push(lookup(format!("agents[{idx}].node"), &agent.node)?);
    }

    let overlay = match &file.base_topology {
        BaseTopology::Named(name) if name == "clique" => {
            OverlaySpec::clique(agent_names, agent_nodes)?
        }
        BaseTopology::Named(other) => {
            return Err(Error::Scenario(format!(
                "base_topology: unknown name '{other}' (expected 'clique' or a pair list)"
            )));
        }
        BaseTopology::Pairs(pairs) => {
            let mut base = Vec::with_capacity(pairs.len());
            for (idx, (a, b)) in pairs.iter().enumerate() {
                let left = *agent_index.get(a.as_str()).ok_or_else(|| {
                    Error::Scenario(format!("base_topology[{idx}]: unknown agent '{a}'"))
                })?;
                let right = *agent_index.get(b.as_str()).ok_or_else(|| {
                    Error::Scenario(format!("base_topology[{idx}]: unknown agent '{b}'"))
                })?;
                base.push((left, right));
            }
            OverlaySpec::new(agent_names, agent_nodes, base)?
        }
    };

    Ok(Scenario { name, underlay, overlay, seed })
}

/// Number of agents placed by the generators.
const GENERATED_AGENTS: usize = 10;

/// Produces the explicit form of a generated scenario.
pub fn generate_scenario(kind: GeneratorKind, seed: u64) -> ScenarioFile {
    match kind {
        GeneratorKind::RoofnetLike => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let positions: Vec<(f64, f64)> =
                (0..33).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())).collect();
            mesh_scenario("roofnet-like", seed, &positions, 93, true, 1.0e6)
        }
        GeneratorKind::IabLike => {
            // 19 cells of a hexagonal layout: center, inner ring, outer ring.
            let mut positions = vec![(0.0f64, 0.0f64)];
            for k in 0..6 {
                let a = std::f64::consts::PI / 3.0 * k as f64;
                positions.push((a.cos(), a.sin()));
            }
            for k in 0..12 {
                let a = std::f64::consts::PI / 6.0 * k as f64;
                let r = if k % 2 == 0 { 2.0 } else { 3.0f64.sqrt() };
                positions.push((r * a.cos(), r * a.sin()));
            }
            // Perturb slightly so distance ties depend on the seed rather
            // than on floating-point coincidences of the ideal grid.
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
            for p in positions.iter_mut().skip(1) {
                p.0 += rng.gen_range(-0.01..0.01);
                p.1 += rng.gen_range(-0.01..0.01);
            }
            mesh_scenario("iab-like", seed, &positions, 28, false, 0.4e9)
        }
    }
}

/// Builds a connected proximity mesh: a minimum spanning tree over Euclidean
/// distances, densified with the shortest remaining pairs until `pairs`
/// undirected links exist. With `extra_one_way`, one additional
/// unidirectional link is appended (odd directed-link budgets).
fn mesh_scenario(
    generator: &str,
    seed: u64,
    positions: &[(f64, f64)],
    pairs: usize,
    extra_one_way: bool,
    capacity_bps: f64,
) -> ScenarioFile {
    let n = positions.len();
    let dist = |a: usize, b: usize| -> f64 {
        let dx = positions[a].0 - positions[b].0;
        let dy = positions[a].1 - positions[b].1;
        (dx * dx + dy * dy).sqrt()
    };
    let mut all_pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    all_pairs.sort_by(|&a, &b| {
        dist(a.0, a.1)
            .partial_cmp(&dist(b.0, b.1))
            .unwrap()
            .then(a.cmp(&b))
    });

    // Kruskal pass for connectivity, then densify by proximity.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut chosen: Vec<(usize, usize)> = Vec::with_capacity(pairs);
    let mut extra: Vec<(usize, usize)> = Vec::new();
    for &(i, j) in &all_pairs {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri] = rj;
            chosen.push((i, j));
        } else {
            extra.push((i, j));
        }
    }
    for &(i, j) in &extra {
        if chosen.len() >= pairs {
            break;
        }
        chosen.push((i, j));
    }
    debug_assert!(chosen.len() == pairs, "node count too small for requested pairs");
    chosen.sort();

    let nodes: Vec<String> = (0..n).map(|i| format!("n{i:02}")).collect();
    let mut links = Vec::with_capacity(pairs * 2 + 1);
    let mut degree = vec![0usize; n];
    for &(i, j) in &chosen {
        degree[i] += 1;
        degree[j] += 1;
        for (src, dst) in [(i, j), (j, i)] {
            links.push(ScenarioLink {
                src: nodes[src].clone(),
                dst: nodes[dst].clone(),
                capacity_bps,
                delay_s: 0.0,
            });
        }
    }
    if extra_one_way {
        let (i, j) = extra
            .iter()
            .copied()
            .find(|p| !chosen.contains(p))
            .expect("dense pair pool exceeds the undirected budget");
        // The one-way link still makes its endpoints neighbors, so it counts
        // toward the degrees that drive agent placement below.
        degree[i] += 1;
        degree[j] += 1;
        links.push(ScenarioLink {
            src: nodes[i].clone(),
            dst: nodes[j].clone(),
            capacity_bps,
            delay_s: 0.0,
        });
    }

    // Agents sit at the lowest-degree nodes (ties toward smaller ids).
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    let mut agent_nodes: Vec<usize> = by_degree.into_iter().take(GENERATED_AGENTS).collect();
    agent_nodes.sort();
    let agents = agent_nodes
        .iter()
        .enumerate()
        .map(|(k, &node)| ScenarioAgent { id: format!("a{k}"), node: nodes[node].clone() })
        .collect();

    ScenarioFile {
        name: Some(format!("{generator}-{seed}")),
        generator: None,
        seed: Some(seed),
        nodes,
        links,
        agents,
        base_topology: BaseTopology::default(),
    }
}
