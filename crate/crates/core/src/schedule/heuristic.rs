//! Price-directed heuristic scheduling for instances too large to solve
//! exactly.
//!
//! Candidate trees are generated by repeatedly building greedy Steiner
//! arborescences under per-category congestion prices (links in loaded
//! categories get expensive, steering later trees around them), with seeded
//! multiplicative jitter for diversity. A coordinate-descent pass then picks
//! one tree per demand, restarting from a few randomized assignments, and
//! keeps the best completion time found. Every output is feasible: rates
//! always come from the shared feasibility search.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::underlay::AgentId;

use super::{
    assemble_schedule, smallest_feasible_tau, tree_paths, CategorySystem, DemandSet, FlowLoad,
    OverlayNet, Schedule,
};

const PRICE_ROUNDS: usize = 48;
const RESTARTS: usize = 4;
const MAX_SWEEPS: usize = 24;

pub(super) fn solve<F: Scalar>(
    demands: &DemandSet<F>,
    net: &OverlayNet<F>,
    sys: &CategorySystem<F>,
    seed: u64,
) -> Result<Schedule<F>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h_count = demands.demands().len();

    // Candidate pools, seeded with the cheapest-hop tree (the direct star
    // when every destination is one hop away).
    let mut pools: Vec<BTreeSet<Vec<(AgentId, AgentId)>>> = Vec::with_capacity(h_count);
    let unit_costs: BTreeMap<(AgentId, AgentId), f64> = net.pairs().map(|p| (p, 1.0)).collect();
    for demand in demands.demands() {
        let star = steiner_tree(demand.source, &demand.destinations, net, &unit_costs)
            .ok_or_else(|| {
                Error::Infeasible(format!(
                    "no relay tree reaches every destination of agent {}",
                    demand.source
                ))
            })?;
        pools.push(BTreeSet::from([star]));
    }

    // Price rounds: each round routes every demand under current prices,
    // then raises the price of saturated categories.
    let mut prices = vec![1.0f64; sys.len()];
    for _ in 0..PRICE_ROUNDS {
        let mut round_trees: Vec<Vec<(AgentId, AgentId)>> = Vec::with_capacity(h_count);
        for demand in demands.demands() {
            let mut costs: BTreeMap<(AgentId, AgentId), f64> = BTreeMap::new();
            for (i, j) in net.pairs() {
                let mut c = 1e-9; // strictly positive floor keeps paths short
                for &cat in sys.membership(i, j) {
                    c += prices[cat] / sys.capacities[cat].widen();
                }
                let jitter = 1.0 + 0.3 * rng.gen::<f64>();
                costs.insert((i, j), c * jitter);
            }
            let tree = steiner_tree(demand.source, &demand.destinations, net, &costs)
                .expect("reachability was established for the pool seeds");
            round_trees.push(tree);
        }
        // Utilization of this round's combined plan drives the prices.
        let mut units = vec![F::zero(); sys.len()];
        for (demand, tree) in demands.demands().iter().zip(&round_trees) {
            for (c, u) in sys.tree_units(tree).into_iter().enumerate() {
                units[c] += u * demand.bits;
            }
        }
        let mut peak = 0.0f64;
        let utils: Vec<f64> = units
            .iter()
            .zip(&sys.capacities)
            .map(|(&u, &cap)| {
                let v = (u / cap).widen();
                peak = peak.max(v);
                v
            })
            .collect();
        if peak > 0.0 {
            for (price, util) in prices.iter_mut().zip(utils) {
                *price *= 1.0 + 2.0 * util / peak;
            }
            let mean: f64 = prices.iter().sum::<f64>() / prices.len().max(1) as f64;
            for price in prices.iter_mut() {
                *price /= mean;
            }
        }
        for (pool, tree) in pools.iter_mut().zip(round_trees) {
            pool.insert(tree);
        }
    }

    let pools: Vec<Vec<Vec<(AgentId, AgentId)>>> =
        pools.into_iter().map(|p| p.into_iter().collect()).collect();

    // Assignment search: descend from the star assignment, then from a few
    // seeded random ones.
    let loads_of = |assign: &[usize]| -> Vec<FlowLoad<F>> {
        demands
            .demands()
            .iter()
            .zip(assign)
            .enumerate()
            .map(|(h, (demand, &c))| {
                let tree = &pools[h][c];
                let (_, _, worst) = tree_paths(demand.source, &demand.destinations, tree, net);
                FlowLoad { bits: demand.bits, delay: worst, units: sys.tree_units(tree) }
            })
            .collect()
    };

    let star_assign: Vec<usize> = pools
        .iter()
        .zip(demands.demands())
        .map(|(pool, demand)| {
            let star = steiner_tree(demand.source, &demand.destinations, net, &unit_costs)
                .expect("seeded above");
            pool.iter().position(|t| *t == star).expect("star is pooled")
        })
        .collect();

    let mut best_assign = star_assign.clone();
    let mut best_tau = smallest_feasible_tau(&loads_of(&best_assign), &sys.capacities)?;

    let mut starts = vec![star_assign];
    for _ in 0..RESTARTS {
        starts.push(pools.iter().map(|pool| rng.gen_range(0..pool.len())).collect());
    }

    for start in starts {
        let mut assign = start;
        let mut tau = smallest_feasible_tau(&loads_of(&assign), &sys.capacities)?;
        for _ in 0..MAX_SWEEPS {
            let mut improved = false;
            for h in 0..h_count {
                let mut local_best = assign[h];
                let mut local_tau = tau;
                let original = assign[h];
                for c in 0..pools[h].len() {
                    if c == original {
                        continue;
                    }
                    assign[h] = c;
                    let t = smallest_feasible_tau(&loads_of(&assign), &sys.capacities)?;
                    if t < local_tau * (F::one() - F::of(1e-12)) {
                        local_tau = t;
                        local_best = c;
                    }
                }
                assign[h] = local_best;
                if local_best != original {
                    tau = local_tau;
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
        if tau < best_tau {
            best_tau = tau;
            best_assign = assign;
        }
    }

    let trees: Vec<Vec<(AgentId, AgentId)>> = best_assign
        .iter()
        .enumerate()
        .map(|(h, &c)| pools[h][c].clone())
        .collect();
    assemble_schedule(demands, &trees, net, sys)
}

/// Greedy Steiner arborescence: repeatedly attach the cheapest-to-reach
/// uncovered destination to the growing tree via a multi-source shortest
/// path. Returns `None` when some destination is unreachable.
fn steiner_tree<F: Scalar>(
    source: AgentId,
    destinations: &BTreeSet<AgentId>,
    net: &OverlayNet<F>,
    costs: &BTreeMap<(AgentId, AgentId), f64>,
) -> Option<Vec<(AgentId, AgentId)>> {
    let m = net.agents();
    let mut in_tree = vec![false; m];
    in_tree[source] = true;
    let mut edges: Vec<(AgentId, AgentId)> = Vec::new();
    let mut remaining: BTreeSet<AgentId> = destinations.clone();

    while !remaining.is_empty() {
        // Dijkstra from the whole tree at distance zero.
        let mut dist = vec![f64::INFINITY; m];
        let mut prev: Vec<Option<AgentId>> = vec![None; m];
        let mut done = vec![false; m];
        for a in 0..m {
            if in_tree[a] {
                dist[a] = 0.0;
            }
        }
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for a in 0..m {
                if !done[a] && dist[a] < best {
                    best = dist[a];
                    u = a;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            for v in 0..m {
                if v == u || done[v] {
                    continue;
                }
                if let Some(&c) = costs.get(&(u, v)) {
                    let nd = dist[u] + c;
                    if nd < dist[v] {
                        dist[v] = nd;
                        prev[v] = Some(u);
                    }
                }
            }
        }
        // Cheapest uncovered destination; ties to the smallest id.
        let mut pick = usize::MAX;
        let mut best = f64::INFINITY;
        for &t in &remaining {
            if dist[t] < best {
                best = dist[t];
                pick = t;
            }
        }
        if pick == usize::MAX {
            return None;
        }
        // Walk back until the path enters the tree, attaching new nodes.
        let mut chain: Vec<AgentId> = vec![pick];
        let mut cur = pick;
        while !in_tree[cur] {
            let p = prev[cur]?;
            chain.push(p);
            cur = p;
        }
        chain.reverse();
        for w in chain.windows(2) {
            if !in_tree[w[1]] {
                in_tree[w[1]] = true;
                edges.push((w[0], w[1]));
            }
        }
        remaining.remove(&pick);
    }
    edges.sort();
    Some(edges)
}
