//! Exact minimum-time scheduling for small instances.
//!
//! Per demand, every relay tree (out-arborescence from the source covering
//! the destinations, possibly through relay agents) is enumerated and
//! reduced to the Pareto front over (category units, worst delay) — swapping
//! a dominated tree for its dominator never hurts any completion time, so
//! an optimal assignment using only front trees exists. Branch-and-bound
//! then searches the per-demand choices with an additive lower bound.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::underlay::AgentId;

use super::{
    assemble_schedule, smallest_feasible_tau, tree_paths, CategorySystem, DemandSet, FlowLoad,
    OverlayNet, Schedule,
};

struct Candidate<F> {
    tree: Vec<(AgentId, AgentId)>,
    units: Vec<F>,
    delay: F,
}

pub(super) fn solve<F: Scalar>(
    demands: &DemandSet<F>,
    net: &OverlayNet<F>,
    sys: &CategorySystem<F>,
) -> Result<Schedule<F>> {
    let m = net.agents();
    let mut fronts: Vec<Vec<Candidate<F>>> = Vec::with_capacity(demands.demands().len());
    for demand in demands.demands() {
        let candidates = pareto_trees(demand.source, &demand.destinations, m, net, sys);
        if candidates.is_empty() {
            return Err(Error::Infeasible(format!(
                "no relay tree reaches every destination of agent {}",
                demand.source
            )));
        }
        fronts.push(candidates);
    }

    // Per-demand standalone optima and componentwise-minimal loads feed the
    // lower bound.
    let mut standalone = Vec::with_capacity(fronts.len());
    let mut relaxed: Vec<FlowLoad<F>> = Vec::with_capacity(fronts.len());
    for (demand, front) in demands.demands().iter().zip(&fronts) {
        let mut best = F::infinity();
        let mut min_units = vec![F::infinity(); sys.len()];
        let mut min_delay = F::infinity();
        for cand in front {
            let load = FlowLoad {
                bits: demand.bits,
                delay: cand.delay,
                units: cand.units.clone(),
            };
            best = best.min(smallest_feasible_tau(&[load], &sys.capacities)?);
            for (mu, &u) in min_units.iter_mut().zip(&cand.units) {
                *mu = mu.min(u);
            }
            min_delay = min_delay.min(cand.delay);
        }
        standalone.push(best);
        relaxed.push(FlowLoad { bits: demand.bits, delay: min_delay, units: min_units });
    }

    // Hardest demands first shrinks the search tree.
    let mut order: Vec<usize> = (0..fronts.len()).collect();
    order.sort_by(|&a, &b| {
        standalone[b]
            .partial_cmp(&standalone[a])
            .expect("finite standalone times")
            .then(a.cmp(&b))
    });

    // Greedy incumbent: each demand in order takes the choice that keeps
    // the partial completion time smallest.
    let mut incumbent: Vec<usize> = vec![0; fronts.len()];
    {
        let mut loads: Vec<FlowLoad<F>> = Vec::new();
        for &h in &order {
            let demand = &demands.demands()[h];
            let mut best_tau = F::infinity();
            let mut best_c = 0;
            for (c, cand) in fronts[h].iter().enumerate() {
                loads.push(FlowLoad {
                    bits: demand.bits,
                    delay: cand.delay,
                    units: cand.units.clone(),
                });
                let tau = smallest_feasible_tau(&loads, &sys.capacities)?;
                loads.pop();
                if tau < best_tau {
                    best_tau = tau;
                    best_c = c;
                }
            }
            incumbent[h] = best_c;
            let cand = &fronts[h][best_c];
            loads.push(FlowLoad {
                bits: demand.bits,
                delay: cand.delay,
                units: cand.units.clone(),
            });
        }
    }
    let mut best_assign = incumbent.clone();
    let mut best_tau = {
        let loads = assignment_loads(demands, &fronts, &best_assign, 0, &[]);
        smallest_feasible_tau(&loads, &sys.capacities)?
    };

    // Depth-first branch-and-bound over the ordered demands.
    let mut chosen: Vec<usize> = vec![0; fronts.len()];
    dfs(
        0,
        &order,
        demands,
        &fronts,
        &relaxed,
        &standalone,
        sys,
        &mut chosen,
        &mut best_assign,
        &mut best_tau,
    )?;

    let trees: Vec<Vec<(AgentId, AgentId)>> = best_assign
        .iter()
        .enumerate()
        .map(|(h, &c)| fronts[h][c].tree.clone())
        .collect();
    assemble_schedule(demands, &trees, net, sys)
}

fn assignment_loads<F: Scalar>(
    demands: &DemandSet<F>,
    fronts: &[Vec<Candidate<F>>],
    chosen: &[usize],
    depth: usize,
    order: &[usize],
) -> Vec<FlowLoad<F>> {
    // With an empty order every demand is considered chosen; otherwise only
    // the first `depth` of `order`.
    let mut loads = Vec::new();
    let assigned: Vec<usize> = if order.is_empty() {
        (0..fronts.len()).collect()
    } else {
        order[..depth].to_vec()
    };
    for h in assigned {
        let cand = &fronts[h][chosen[h]];
        loads.push(FlowLoad {
            bits: demands.demands()[h].bits,
            delay: cand.delay,
            units: cand.units.clone(),
        });
    }
    loads
}

#[allow(clippy::too_many_arguments)]
fn dfs<F: Scalar>(
    depth: usize,
    order: &[usize],
    demands: &DemandSet<F>,
    fronts: &[Vec<Candidate<F>>],
    relaxed: &[FlowLoad<F>],
    standalone: &[F],
    sys: &CategorySystem<F>,
    chosen: &mut Vec<usize>,
    best_assign: &mut Vec<usize>,
    best_tau: &mut F,
) -> Result<()> {
    if depth == order.len() {
        let loads = assignment_loads(demands, fronts, chosen, depth, order);
        let tau = smallest_feasible_tau(&loads, &sys.capacities)?;
        if tau < *best_tau {
            *best_tau = tau;
            *best_assign = chosen.clone();
        }
        return Ok(());
    }
    let h = order[depth];
    // Try the candidates most promising for this demand first.
    let mut idx: Vec<usize> = (0..fronts[h].len()).collect();
    idx.sort_by(|&a, &b| {
        fronts[h][a]
            .delay
            .partial_cmp(&fronts[h][b].delay)
            .expect("finite delays")
            .then_with(|| fronts[h][a].tree.len().cmp(&fronts[h][b].tree.len()))
    });
    for c in idx {
        chosen[h] = c;
        // Lower bound: fixed choices so far, this choice, and the
        // componentwise-minimal relaxation of everything still open.
        let mut loads = assignment_loads(demands, fronts, chosen, depth + 1, order);
        let mut open_standalone = F::zero();
        for &rest in &order[depth + 1..] {
            loads.push(relaxed[rest].clone());
            open_standalone = open_standalone.max(standalone[rest]);
        }
        let bound = smallest_feasible_tau(&loads, &sys.capacities)?.max(open_standalone);
        if bound >= *best_tau {
            continue;
        }
        dfs(
            depth + 1,
            order,
            demands,
            fronts,
            relaxed,
            standalone,
            sys,
            chosen,
            best_assign,
            best_tau,
        )?;
    }
    Ok(())
}

/// All Pareto-optimal relay trees for one demand.
fn pareto_trees<F: Scalar>(
    source: AgentId,
    destinations: &BTreeSet<AgentId>,
    agents: usize,
    net: &OverlayNet<F>,
    sys: &CategorySystem<F>,
) -> Vec<Candidate<F>> {
    let others: Vec<AgentId> = (0..agents)
        .filter(|a| *a != source && !destinations.contains(a))
        .collect();

    let mut all: Vec<Candidate<F>> = Vec::new();
    for mask in 0..(1usize << others.len()) {
        let mut nodes: Vec<AgentId> = vec![source];
        nodes.extend(destinations.iter().copied());
        let mut relays: BTreeSet<AgentId> = BTreeSet::new();
        for (b, &agent) in others.iter().enumerate() {
            if mask & (1 << b) != 0 {
                nodes.push(agent);
                relays.insert(agent);
            }
        }
        nodes.sort();
        enumerate_arborescences(source, &nodes, &relays, net, &mut |tree| {
            let units = sys.tree_units(tree);
            let (_, _, worst) = tree_paths(source, destinations, tree, net);
            all.push(Candidate { tree: tree.to_vec(), units, delay: worst });
        });
    }

    // Pareto filter on (units, delay); earlier candidates win ties, which
    // keeps the result a pure function of the input.
    let mut keep = vec![true; all.len()];
    for a in 0..all.len() {
        if !keep[a] {
            continue;
        }
        for b in 0..all.len() {
            if a == b || !keep[b] {
                continue;
            }
            if dominates(&all[a], &all[b], a < b) {
                keep[b] = false;
            }
        }
    }
    all.into_iter()
        .zip(keep)
        .filter_map(|(c, k)| k.then_some(c))
        .collect()
}

/// Whether `a` renders `b` redundant: no category worse, no more delay, and
/// either strictly better somewhere or an earlier tie-break.
fn dominates<F: Scalar>(a: &Candidate<F>, b: &Candidate<F>, a_first: bool) -> bool {
    let mut strictly = false;
    for (&ua, &ub) in a.units.iter().zip(&b.units) {
        if ua > ub {
            return false;
        }
        if ua < ub {
            strictly = true;
        }
    }
    if a.delay > b.delay {
        return false;
    }
    if a.delay < b.delay {
        strictly = true;
    }
    strictly || a_first
}

/// Enumerates every out-arborescence rooted at `source` spanning exactly
/// `nodes`, in which every relay has at least one child. Each tree is the
/// graph of a unique parent function, so none is reported twice.
fn enumerate_arborescences<F: Scalar>(
    source: AgentId,
    nodes: &[AgentId],
    relays: &BTreeSet<AgentId>,
    net: &OverlayNet<F>,
    emit: &mut dyn FnMut(&[(AgentId, AgentId)]),
) {
    let non_roots: Vec<AgentId> = nodes.iter().copied().filter(|&a| a != source).collect();
    let mut parents: Vec<AgentId> = vec![source; non_roots.len()];
    assign(0, source, nodes, &non_roots, relays, net, &mut parents, emit);
}

#[allow(clippy::too_many_arguments)]
fn assign<F: Scalar>(
    pos: usize,
    source: AgentId,
    nodes: &[AgentId],
    non_roots: &[AgentId],
    relays: &BTreeSet<AgentId>,
    net: &OverlayNet<F>,
    parents: &mut Vec<AgentId>,
    emit: &mut dyn FnMut(&[(AgentId, AgentId)]),
) {
    if pos == non_roots.len() {
        // Acyclic: follow parent pointers from every node to the source.
        for &child in non_roots {
            let mut cur = child;
            let mut steps = 0;
            while cur != source {
                let k = non_roots.iter().position(|&a| a == cur).expect("in set");
                cur = parents[k];
                steps += 1;
                if steps > non_roots.len() {
                    return; // cycle
                }
            }
        }
        // Relays must forward to someone.
        for &relay in relays {
            if !parents.iter().enumerate().any(|(k, &p)| p == relay && non_roots[k] != relay) {
                return;
            }
        }
        let mut tree: Vec<(AgentId, AgentId)> = non_roots
            .iter()
            .enumerate()
            .map(|(k, &child)| (parents[k], child))
            .collect();
        tree.sort();
        emit(&tree);
        return;
    }
    let child = non_roots[pos];
    for &p in nodes {
        if p != child && net.has(p, child) {
            parents[pos] = p;
            assign(pos + 1, source, nodes, non_roots, relays, net, parents, emit);
        }
    }
}
