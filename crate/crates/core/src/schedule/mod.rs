//! Communication schedules: delivering each agent's model to its neighbors
//! as fast as the shared underlay allows.
//!
//! One mixing iteration must move every agent's model (`bits` each) to all
//! of its activated neighbors. Payloads travel along routed overlay links,
//! and overlay links that share underlay bandwidth are tied together by the
//! capacity categories of [`crate::underlay`]: the combined rate of the
//! overlay links in a category cannot exceed its capacity.
//!
//! A [`Schedule`] assigns each source a multicast tree (relaying through
//! other agents is allowed, which can bypass bottlenecks) and a single
//! stream rate per tree. [`min_time_schedule`] searches for trees minimizing
//! the completion time; [`direct_path_schedule`] is the no-relay reference,
//! whose completion time [`tau_bar`] is the per-iteration cost used by the
//! topology search; [`equal_share_time`] and [`simulate_completion`] model a
//! plain fair-share execution without planned rates.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::topology::ActivationSet;
use crate::underlay::{
    AgentId, CategoryKey, CategoryTable, InferredView, OverlaySpec, RoutingTable,
};

mod exact;
mod heuristic;

/// The routed overlay as the scheduler sees it: which directed agent pairs
/// can carry traffic, and the propagation delay of each.
#[derive(Debug, Clone)]
pub struct OverlayNet<F> {
    agents: usize,
    delays: BTreeMap<(AgentId, AgentId), F>,
}

impl<F: Scalar> OverlayNet<F> {
    /// Extracts the routed pairs and their path delays for an overlay.
    pub fn from_routing(overlay: &OverlaySpec, routing: &RoutingTable<F>) -> Result<Self> {
        let mut delays = BTreeMap::new();
        for (i, j) in overlay.directed_links() {
            let delay = routing
                .delay(i, j)
                .ok_or_else(|| Error::NoRoute {
                    from: overlay.agent_name(i).to_string(),
                    to: overlay.agent_name(j).to_string(),
                })?;
            delays.insert((i, j), delay);
        }
        Ok(Self { agents: overlay.num_agents(), delays })
    }

    /// All agent pairs connected directly with the given delay; handy in
    /// tests.
    pub fn complete(agents: usize, delay: F) -> Self {
        let mut delays = BTreeMap::new();
        for i in 0..agents {
            for j in 0..agents {
                if i != j {
                    delays.insert((i, j), delay);
                }
            }
        }
        Self { agents, delays }
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn has(&self, src: AgentId, dst: AgentId) -> bool {
        self.delays.contains_key(&(src, dst))
    }

    pub fn delay(&self, src: AgentId, dst: AgentId) -> Option<F> {
        self.delays.get(&(src, dst)).copied()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (AgentId, AgentId)> + '_ {
        self.delays.keys().copied()
    }
}

/// One source's obligation for an iteration: its payload must reach every
/// destination.
#[derive(Debug, Clone, PartialEq)]
pub struct Demand<F> {
    pub source: AgentId,
    pub destinations: BTreeSet<AgentId>,
    pub bits: F,
}

/// The per-iteration demands of all sources.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandSet<F> {
    agents: usize,
    demands: Vec<Demand<F>>,
}

impl<F: Scalar> DemandSet<F> {
    pub fn new(agents: usize, demands: Vec<Demand<F>>) -> Result<Self> {
        for d in &demands {
            if d.destinations.is_empty() {
                return Err(Error::Invalid(format!(
                    "demand from agent {} has no destinations",
                    d.source
                )));
            }
            if d.source >= agents || d.destinations.iter().any(|&t| t >= agents) {
                return Err(Error::Invalid("demand references an unknown agent".into()));
            }
            if d.destinations.contains(&d.source) {
                return Err(Error::Invalid(format!(
                    "demand from agent {} lists itself as a destination",
                    d.source
                )));
            }
            if !(d.bits > F::zero()) {
                return Err(Error::Invalid(format!(
                    "demand from agent {} must carry a positive payload",
                    d.source
                )));
            }
        }
        Ok(Self { agents, demands })
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn demands(&self) -> &[Demand<F>] {
        &self.demands
    }

    pub fn is_empty(&self) -> bool {
        self.demands.is_empty()
    }
}

/// The demands induced by an activated topology: every agent must send its
/// model (`bits`) to each activated neighbor.
pub fn demands_from_activation<F: Scalar>(active: &ActivationSet, bits: F) -> Result<DemandSet<F>> {
    if !(bits > F::zero()) {
        return Err(Error::Invalid(format!("payload must be positive, got {bits}")));
    }
    let mut demands = Vec::new();
    for source in 0..active.agents() {
        let destinations = active.neighbors(source);
        if !destinations.is_empty() {
            demands.push(Demand { source, destinations, bits });
        }
    }
    DemandSet::new(active.agents(), demands)
}

/// One source's multicast stream: a tree of directed overlay links rooted at
/// the source, streamed at a single rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledFlow<F> {
    pub source: AgentId,
    pub destinations: BTreeSet<AgentId>,
    pub bits: F,
    /// Directed overlay links of the tree, sorted.
    pub tree: Vec<(AgentId, AgentId)>,
    /// Stream rate in bits per second. Infinite when the tree touches no
    /// tracked capacity (completion is then delay-bound).
    pub rate: F,
    /// Agent sequence from the source to each destination, inside the tree.
    pub paths: BTreeMap<AgentId, Vec<AgentId>>,
    /// Propagation delay accumulated along each destination's path.
    pub path_delays: BTreeMap<AgentId, F>,
}

impl<F: Scalar> ScheduledFlow<F> {
    /// Time until the last destination holds the full payload.
    pub fn completion(&self) -> F {
        let worst_delay = self
            .path_delays
            .values()
            .copied()
            .fold(F::zero(), F::max);
        self.bits / self.rate + worst_delay
    }
}

/// A complete communication plan for one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule<F> {
    pub flows: Vec<ScheduledFlow<F>>,
    /// Planned completion time of the slowest destination.
    pub tau: F,
}

/// How [`min_time_schedule`] should search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleMode {
    /// Exact on small instances (at most [`EXACT_AGENT_LIMIT`] agents and
    /// [`EXACT_DEMAND_LIMIT`] demands), heuristic otherwise.
    Auto,
    Exact,
    Heuristic,
}

pub const EXACT_AGENT_LIMIT: usize = 6;
pub const EXACT_DEMAND_LIMIT: usize = 6;

#[derive(Debug, Clone, Copy)]
pub struct ScheduleOptions {
    pub mode: ScheduleMode,
    /// Seed for the randomized parts of the heuristic; the result is a pure
    /// function of (inputs, seed).
    pub seed: u64,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        Self { mode: ScheduleMode::Auto, seed: 0 }
    }
}

/// Finds a low-completion-time schedule for the demands.
///
/// Exact mode enumerates per-demand relay trees, prunes dominated ones, and
/// runs branch-and-bound over the assignments; it is exponential and gated
/// to small instances. Heuristic mode generates candidate trees with
/// price-directed search plus seeded randomization and polishes the
/// assignment by coordinate descent; it always returns a feasible schedule
/// no worse than sending along direct paths.
pub fn min_time_schedule<F: Scalar>(
    demands: &DemandSet<F>,
    net: &OverlayNet<F>,
    view: &InferredView<F>,
    options: &ScheduleOptions,
) -> Result<Schedule<F>> {
    if demands.agents() != net.agents() {
        return Err(Error::Dimension(format!(
            "demands over {} agents, overlay over {}",
            demands.agents(),
            net.agents()
        )));
    }
    if demands.is_empty() {
        return Ok(Schedule { flows: Vec::new(), tau: F::zero() });
    }
    let sys = CategorySystem::from_view(view);
    let exact = match options.mode {
        ScheduleMode::Exact => true,
        ScheduleMode::Heuristic => false,
        ScheduleMode::Auto => {
            net.agents() <= EXACT_AGENT_LIMIT && demands.demands().len() <= EXACT_DEMAND_LIMIT
        }
    };
    if exact {
        exact::solve(demands, net, &sys)
    } else {
        heuristic::solve(demands, net, &sys, options.seed)
    }
}

/// Completion time of the no-relay reference plan: every activated link
/// carries its payload along its own routed path, with rates chosen jointly
/// to finish as early as possible. This is the per-iteration communication
/// cost the topology search charges to an activation set.
pub fn tau_bar<F: Scalar>(
    active: &ActivationSet,
    net: &OverlayNet<F>,
    view: &InferredView<F>,
    bits: F,
) -> Result<F> {
    if active.is_empty() {
        return Ok(F::zero());
    }
    let sys = CategorySystem::from_view(view);
    let loads = direct_loads(active, net, &sys, bits)?;
    smallest_feasible_tau(&loads, &sys.capacities)
}

/// The no-relay reference plan itself: one unicast flow per activated
/// directed link. Its `tau` equals [`tau_bar`] exactly (both are computed
/// from the same loads by the same search).
pub fn direct_path_schedule<F: Scalar>(
    active: &ActivationSet,
    net: &OverlayNet<F>,
    view: &InferredView<F>,
    bits: F,
) -> Result<Schedule<F>> {
    if active.is_empty() {
        return Ok(Schedule { flows: Vec::new(), tau: F::zero() });
    }
    let sys = CategorySystem::from_view(view);
    let loads = direct_loads(active, net, &sys, bits)?;
    let tau = smallest_feasible_tau(&loads, &sys.capacities)?;

    let mut flows = Vec::new();
    for (&(i, j), load) in active.directed_links().iter().zip(loads.iter()) {
        let rate = if load.units.iter().any(|&u| u > F::zero()) {
            load.bits / (tau - load.delay)
        } else {
            F::infinity()
        };
        flows.push(ScheduledFlow {
            source: i,
            destinations: BTreeSet::from([j]),
            bits,
            tree: vec![(i, j)],
            rate,
            paths: BTreeMap::from([(j, vec![i, j])]),
            path_delays: BTreeMap::from([(j, load.delay)]),
        });
    }
    Ok(Schedule { flows, tau })
}

fn direct_loads<F: Scalar>(
    active: &ActivationSet,
    net: &OverlayNet<F>,
    sys: &CategorySystem<F>,
    bits: F,
) -> Result<Vec<FlowLoad<F>>> {
    if !(bits > F::zero()) {
        return Err(Error::Invalid(format!("payload must be positive, got {bits}")));
    }
    let mut loads = Vec::new();
    for (i, j) in active.directed_links() {
        let delay = net.delay(i, j).ok_or_else(|| {
            Error::Invalid(format!("activated link ({i}, {j}) has no routed path"))
        })?;
        let mut units = vec![F::zero(); sys.len()];
        for &c in sys.membership(i, j) {
            units[c] += F::one();
        }
        loads.push(FlowLoad { bits, delay, units });
    }
    Ok(loads)
}

/// Completion time under plain fair sharing, with no planned rates: every
/// activated directed link gets an equal share of each category it belongs
/// to, and runs at the smallest of its shares.
pub fn equal_share_time<F: Scalar>(
    active: &ActivationSet,
    net: &OverlayNet<F>,
    view: &InferredView<F>,
    bits: F,
) -> Result<F> {
    if !(bits > F::zero()) {
        return Err(Error::Invalid(format!("payload must be positive, got {bits}")));
    }
    let sys = CategorySystem::from_view(view);
    let links = active.directed_links();
    let mut users = vec![F::zero(); sys.len()];
    for &(i, j) in &links {
        for &c in sys.membership(i, j) {
            users[c] += F::one();
        }
    }
    let mut worst = F::zero();
    for &(i, j) in &links {
        let delay = net.delay(i, j).ok_or_else(|| {
            Error::Invalid(format!("activated link ({i}, {j}) has no routed path"))
        })?;
        let mut rate = F::infinity();
        for &c in sys.membership(i, j) {
            rate = rate.min(sys.capacities[c] / users[c]);
        }
        let completion = if rate.is_infinite() { delay } else { bits / rate + delay };
        worst = worst.max(completion);
    }
    Ok(worst)
}

/// Executes a schedule's trees under fair sharing of the true capacities,
/// ignoring the planned rates: every (flow, link) occupancy gets an equal
/// share of each category, each destination receives at the smallest rate
/// along its path, and the result is the time the last destination
/// finishes.
pub fn simulate_completion<F: Scalar>(schedule: &Schedule<F>, truth: &CategoryTable<F>) -> F {
    let categories: Vec<(&CategoryKey, F)> = truth
        .categories()
        .iter()
        .map(|c| (&c.key, c.capacity))
        .collect();

    // Occupancy of each category: one unit per (flow, tree link) pair.
    let mut users = vec![F::zero(); categories.len()];
    for flow in &schedule.flows {
        for &(i, j) in &flow.tree {
            for (c, (key, _)) in categories.iter().enumerate() {
                if key.contains(&(i, j)) {
                    users[c] += F::one();
                }
            }
        }
    }

    let mut worst = F::zero();
    for flow in &schedule.flows {
        // Rate of each tree link under fair sharing.
        let mut link_rate: BTreeMap<(AgentId, AgentId), F> = BTreeMap::new();
        for &(i, j) in &flow.tree {
            let mut rate = F::infinity();
            for (c, (key, cap)) in categories.iter().enumerate() {
                if key.contains(&(i, j)) {
                    rate = rate.min(*cap / users[c]);
                }
            }
            link_rate.insert((i, j), rate);
        }
        for (dst, path) in &flow.paths {
            let mut rate = F::infinity();
            for w in path.windows(2) {
                rate = rate.min(link_rate[&(w[0], w[1])]);
            }
            let delay = flow.path_delays[dst];
            let completion = if rate.is_infinite() { delay } else { flow.bits / rate + delay };
            worst = worst.max(completion);
        }
    }
    worst
}

/// Numbers reported by [`validate_schedule`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleCheck<F> {
    /// The schedule's claimed completion time.
    pub tau: F,
    /// Slowest destination under the planned rates.
    pub worst_completion: F,
    /// Largest category load divided by capacity.
    pub peak_utilization: F,
}

/// Checks a schedule against its demands and the capacity view: every
/// demand served by a well-formed tree, every category within capacity,
/// every destination finished by `tau` (all up to small rounding slack).
pub fn validate_schedule<F: Scalar>(
    schedule: &Schedule<F>,
    demands: &DemandSet<F>,
    net: &OverlayNet<F>,
    view: &InferredView<F>,
) -> Result<ScheduleCheck<F>> {
    let sys = CategorySystem::from_view(view);
    let slack = F::of(1e-7);

    // Every demand's destination set is partitioned among the flows from
    // its source (a single multicast tree and a per-destination unicast
    // split are both fine), and every flow answers some demand.
    let mut by_source: BTreeMap<AgentId, Vec<&ScheduledFlow<F>>> = BTreeMap::new();
    for flow in &schedule.flows {
        by_source.entry(flow.source).or_default().push(flow);
    }
    for demand in demands.demands() {
        let flows = by_source.remove(&demand.source).ok_or_else(|| {
            Error::Invalid(format!("no flow serves the demand of agent {}", demand.source))
        })?;
        let mut covered: BTreeSet<AgentId> = BTreeSet::new();
        for flow in flows {
            for &dst in &flow.destinations {
                if !covered.insert(dst) {
                    return Err(Error::Invalid(format!(
                        "destination {dst} of agent {} is served twice",
                        demand.source
                    )));
                }
            }
            if flow.bits != demand.bits {
                return Err(Error::Invalid(format!(
                    "flow from agent {} carries the wrong payload",
                    demand.source
                )));
            }
            check_tree(flow, net)?;
        }
        if covered != demand.destinations {
            return Err(Error::Invalid(format!(
                "flows from agent {} serve the wrong destinations",
                demand.source
            )));
        }
    }
    if !by_source.is_empty() {
        let extra: Vec<String> = by_source.keys().map(|s| s.to_string()).collect();
        return Err(Error::Invalid(format!(
            "flows without a matching demand from agents {}",
            extra.join(", ")
        )));
    }

    // Capacity per category and completion per destination.
    let mut load = vec![F::zero(); sys.len()];
    let mut worst_completion = F::zero();
    for flow in &schedule.flows {
        if !(flow.rate > F::zero()) {
            return Err(Error::Invalid(format!(
                "flow from agent {} has a non-positive rate",
                flow.source
            )));
        }
        if flow.rate.is_finite() {
            for &(i, j) in &flow.tree {
                for &c in sys.membership(i, j) {
                    load[c] += flow.rate;
                }
            }
        } else {
            // An unthrottled flow is only legal when its tree consumes no
            // tracked capacity.
            for &(i, j) in &flow.tree {
                if !sys.membership(i, j).is_empty() {
                    return Err(Error::Invalid(format!(
                        "flow from agent {} has infinite rate on a capacity-bearing link",
                        flow.source
                    )));
                }
            }
        }
        worst_completion = worst_completion.max(flow.completion());
    }
    let mut peak = F::zero();
    for c in 0..sys.len() {
        let util = load[c] / sys.capacities[c];
        peak = peak.max(util);
        if util > F::one() + slack {
            return Err(Error::Infeasible(format!(
                "category {c} is overloaded: utilization {util}"
            )));
        }
    }
    if worst_completion > schedule.tau * (F::one() + slack) + slack {
        return Err(Error::Infeasible(format!(
            "a destination finishes at {worst_completion}, after the claimed {}",
            schedule.tau
        )));
    }
    Ok(ScheduleCheck { tau: schedule.tau, worst_completion, peak_utilization: peak })
}

fn check_tree<F: Scalar>(flow: &ScheduledFlow<F>, net: &OverlayNet<F>) -> Result<()> {
    let mut parent: BTreeMap<AgentId, AgentId> = BTreeMap::new();
    let mut children: BTreeMap<AgentId, Vec<AgentId>> = BTreeMap::new();
    for &(i, j) in &flow.tree {
        if !net.has(i, j) {
            return Err(Error::Invalid(format!(
                "flow from agent {} uses the unrouted link ({i}, {j})",
                flow.source
            )));
        }
        if parent.insert(j, i).is_some() || j == flow.source {
            return Err(Error::Invalid(format!(
                "flow from agent {} is not a tree: agent {j} is reached twice",
                flow.source
            )));
        }
        children.entry(i).or_default().push(j);
    }
    // Walk from the source; everything must be reachable.
    let mut reached = BTreeSet::from([flow.source]);
    let mut stack = vec![flow.source];
    while let Some(u) = stack.pop() {
        for &v in children.get(&u).into_iter().flatten() {
            if reached.insert(v) {
                stack.push(v);
            }
        }
    }
    if reached.len() != parent.len() + 1 {
        return Err(Error::Invalid(format!(
            "flow from agent {} is not a tree: detached links",
            flow.source
        )));
    }
    for dst in &flow.destinations {
        if !reached.contains(dst) {
            return Err(Error::Invalid(format!(
                "flow from agent {} never reaches destination {dst}",
                flow.source
            )));
        }
        let path = flow.paths.get(dst).ok_or_else(|| {
            Error::Invalid(format!("flow from agent {} lacks a path entry for {dst}", flow.source))
        })?;
        if path.first() != Some(&flow.source) || path.last() != Some(dst) {
            return Err(Error::Invalid(format!(
                "flow from agent {} has a malformed path to {dst}",
                flow.source
            )));
        }
        for w in path.windows(2) {
            if parent.get(&w[1]) != Some(&w[0]) {
                return Err(Error::Invalid(format!(
                    "flow from agent {} has a path to {dst} leaving its tree",
                    flow.source
                )));
            }
        }
    }
    // Leaves that are not destinations would burn capacity for nothing.
    for (&node, _) in parent.iter() {
        let is_leaf = !children.contains_key(&node);
        if is_leaf && !flow.destinations.contains(&node) {
            return Err(Error::Invalid(format!(
                "flow from agent {} relays through dead-end agent {node}",
                flow.source
            )));
        }
    }
    Ok(())
}

/// Capacity categories flattened for the solvers: parallel capacity array
/// plus a per-pair membership index.
pub(crate) struct CategorySystem<F> {
    pub(crate) capacities: Vec<F>,
    membership: BTreeMap<(AgentId, AgentId), Vec<usize>>,
    empty: Vec<usize>,
}

impl<F: Scalar> CategorySystem<F> {
    pub(crate) fn from_view(view: &InferredView<F>) -> Self {
        let mut capacities = Vec::with_capacity(view.categories().len());
        let mut membership: BTreeMap<(AgentId, AgentId), Vec<usize>> = BTreeMap::new();
        for (c, cat) in view.categories().iter().enumerate() {
            capacities.push(cat.capacity);
            for &pair in &cat.key {
                membership.entry(pair).or_default().push(c);
            }
        }
        Self { capacities, membership, empty: Vec::new() }
    }

    pub(crate) fn len(&self) -> usize {
        self.capacities.len()
    }

    pub(crate) fn membership(&self, i: AgentId, j: AgentId) -> &[usize] {
        self.membership.get(&(i, j)).unwrap_or(&self.empty)
    }

    /// Category units consumed by a tree: one per (link, category)
    /// incidence.
    pub(crate) fn tree_units(&self, tree: &[(AgentId, AgentId)]) -> Vec<F> {
        let mut units = vec![F::zero(); self.len()];
        for &(i, j) in tree {
            for &c in self.membership(i, j) {
                units[c] += F::one();
            }
        }
        units
    }
}

/// What one flow asks of the categories: `units[c] * bits / (tau - delay)`
/// of category `c`'s capacity when finishing by `tau`.
#[derive(Debug, Clone)]
pub(crate) struct FlowLoad<F> {
    pub(crate) bits: F,
    /// Worst propagation delay among the flow's destinations.
    pub(crate) delay: F,
    pub(crate) units: Vec<F>,
}

/// Smallest completion time at which all loads fit the capacities:
/// feasibility of a candidate `tau` asks that every category `c` satisfy
/// `sum_f units[f][c] * bits_f / (tau - delay_f) <= capacity_c`.
///
/// With zero delays the answer is closed-form; otherwise the residual is
/// monotone in `tau` and a bracketed bisection converges to relative
/// precision `1e-9`. The result is a pure function of the loads, so two
/// callers building identical loads get identical times.
pub(crate) fn smallest_feasible_tau<F: Scalar>(
    loads: &[FlowLoad<F>],
    capacities: &[F],
) -> Result<F> {
    let max_delay = loads.iter().map(|l| l.delay).fold(F::zero(), F::max);
    if max_delay == F::zero() {
        let mut tau = F::zero();
        for (c, &cap) in capacities.iter().enumerate() {
            let total: F = loads.iter().map(|l| l.units[c] * l.bits).sum();
            tau = tau.max(total / cap);
        }
        return Ok(tau);
    }

    let feasible = |tau: F| -> bool {
        for (c, &cap) in capacities.iter().enumerate() {
            let mut need = F::zero();
            for l in loads {
                if l.units[c] > F::zero() {
                    // tau > delay is guaranteed by the caller's bracket.
                    need += l.units[c] * l.bits / (tau - l.delay);
                }
            }
            if need > cap {
                return false;
            }
        }
        true
    };

    // Bracket: below lo nothing with a delay-bound flow can finish; grow hi
    // until feasible.
    let lo0 = max_delay;
    let mut hi = max_delay * F::of(2.0) + F::one();
    let mut grow = 0;
    while !feasible(hi) {
        hi = hi * F::of(2.0);
        grow += 1;
        if grow > 200 {
            return Err(Error::Infeasible(
                "completion-time search failed to bracket a feasible time".into(),
            ));
        }
    }
    let mut lo = lo0;
    let tol = F::of(1e-9);
    while (hi - lo) > tol * hi.max(F::one()) {
        let mid = (lo + hi) * F::of(0.5);
        if mid <= max_delay {
            break;
        }
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Direct loads of a fixed candidate link list, precomputed once so that
/// searches can price many subsets of the same candidates cheaply. Each
/// undirected candidate carries two directed loads.
pub(crate) struct LinkLoads<F> {
    capacities: Vec<F>,
    per_link: Vec<[FlowLoad<F>; 2]>,
}

impl<F: Scalar> LinkLoads<F> {
    pub(crate) fn new(
        links: &[(AgentId, AgentId)],
        net: &OverlayNet<F>,
        view: &InferredView<F>,
        bits: F,
    ) -> Result<Self> {
        if !(bits > F::zero()) {
            return Err(Error::Invalid(format!("payload must be positive, got {bits}")));
        }
        let sys = CategorySystem::from_view(view);
        let mut per_link = Vec::with_capacity(links.len());
        for &(i, j) in links {
            let mut pair = Vec::with_capacity(2);
            for (s, d) in [(i, j), (j, i)] {
                let delay = net.delay(s, d).ok_or_else(|| {
                    Error::Invalid(format!("candidate link ({s}, {d}) has no routed path"))
                })?;
                let mut units = vec![F::zero(); sys.len()];
                for &c in sys.membership(s, d) {
                    units[c] += F::one();
                }
                pair.push(FlowLoad { bits, delay, units });
            }
            let [a, b] = <[FlowLoad<F>; 2]>::try_from(pair).expect("two directions");
            per_link.push([a, b]);
        }
        Ok(Self { capacities: sys.capacities, per_link })
    }

    /// Linearized feasibility at a fixed completion budget: for each
    /// candidate link, the capacity each category must grant it to finish by
    /// `beta`, plus the capacity array and a flag for links that cannot
    /// finish by `beta` at all (their delay already exceeds it).
    #[allow(clippy::type_complexity)]
    pub(crate) fn coefficients_at(&self, beta: F) -> (Vec<Vec<(usize, F)>>, Vec<F>, Vec<bool>) {
        let mut coef = Vec::with_capacity(self.per_link.len());
        let mut forbidden = vec![false; self.per_link.len()];
        for (e, pair) in self.per_link.iter().enumerate() {
            let mut by_category: BTreeMap<usize, F> = BTreeMap::new();
            for load in pair {
                let loaded = load.units.iter().any(|&u| u > F::zero());
                if (loaded && beta <= load.delay) || beta < load.delay {
                    forbidden[e] = true;
                    break;
                }
                for (c, &u) in load.units.iter().enumerate() {
                    if u > F::zero() {
                        *by_category.entry(c).or_insert(F::zero()) +=
                            u * load.bits / (beta - load.delay);
                    }
                }
            }
            if forbidden[e] {
                coef.push(Vec::new());
            } else {
                coef.push(by_category.into_iter().collect());
            }
        }
        (coef, self.capacities.clone(), forbidden)
    }
}

/// Completion time of the direct plan restricted to a subset of the
/// precomputed candidates, given by index.
pub(crate) fn smallest_feasible_tau_for_links<F: Scalar>(
    loads: &LinkLoads<F>,
    included: &[usize],
) -> Result<F> {
    let flat: Vec<FlowLoad<F>> = included
        .iter()
        .flat_map(|&e| loads.per_link[e].iter().cloned())
        .collect();
    smallest_feasible_tau(&flat, &loads.capacities)
}

/// Builds the per-destination paths and delays of a tree rooted at
/// `source`, returning `(paths, delays, worst_delay)` for the given
/// destinations.
pub(crate) fn tree_paths<F: Scalar>(
    source: AgentId,
    destinations: &BTreeSet<AgentId>,
    tree: &[(AgentId, AgentId)],
    net: &OverlayNet<F>,
) -> (BTreeMap<AgentId, Vec<AgentId>>, BTreeMap<AgentId, F>, F) {
    let mut parent: BTreeMap<AgentId, AgentId> = BTreeMap::new();
    for &(i, j) in tree {
        parent.insert(j, i);
    }
    let mut paths = BTreeMap::new();
    let mut delays = BTreeMap::new();
    let mut worst = F::zero();
    for &dst in destinations {
        let mut rev = vec![dst];
        let mut cur = dst;
        while cur != source {
            cur = parent[&cur];
            rev.push(cur);
        }
        rev.reverse();
        let mut delay = F::zero();
        for w in rev.windows(2) {
            delay += net.delay(w[0], w[1]).expect("tree edges are routed pairs");
        }
        worst = worst.max(delay);
        paths.insert(dst, rev);
        delays.insert(dst, delay);
    }
    (paths, delays, worst)
}

/// Materializes flows from chosen trees: the completion time comes from the
/// shared feasibility search, and each flow gets the smallest rate that
/// meets it.
pub(crate) fn assemble_schedule<F: Scalar>(
    demands: &DemandSet<F>,
    trees: &[Vec<(AgentId, AgentId)>],
    net: &OverlayNet<F>,
    sys: &CategorySystem<F>,
) -> Result<Schedule<F>> {
    let mut loads = Vec::with_capacity(demands.demands().len());
    let mut rendered = Vec::with_capacity(demands.demands().len());
    for (demand, tree) in demands.demands().iter().zip(trees) {
        let (paths, path_delays, worst) = tree_paths(demand.source, &demand.destinations, tree, net);
        loads.push(FlowLoad {
            bits: demand.bits,
            delay: worst,
            units: sys.tree_units(tree),
        });
        rendered.push((paths, path_delays, worst));
    }
    let tau = smallest_feasible_tau(&loads, &sys.capacities)?;
    let mut flows = Vec::with_capacity(demands.demands().len());
    for ((demand, tree), (load, (paths, path_delays, worst))) in demands
        .demands()
        .iter()
        .zip(trees)
        .zip(loads.iter().zip(rendered))
    {
        let rate = if load.units.iter().any(|&u| u > F::zero()) {
            demand.bits / (tau - worst)
        } else {
            F::infinity()
        };
        flows.push(ScheduledFlow {
            source: demand.source,
            destinations: demand.destinations.clone(),
            bits: demand.bits,
            tree: tree.clone(),
            rate,
            paths,
            path_delays,
        });
    }
    Ok(Schedule { flows, tau })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::underlay::{Provenance, ViewCategory};

    fn view_of(categories: Vec<(Vec<(usize, usize)>, f64)>) -> InferredView<f64> {
        InferredView::from_parts(
            categories
                .into_iter()
                .map(|(key, capacity)| ViewCategory {
                    key: key.into_iter().collect(),
                    capacity,
                })
                .collect(),
            Provenance::Exact,
        )
        .unwrap()
    }

    #[test]
    fn demands_cover_every_activated_neighborhood() {
        let active = ActivationSet::new(4, [(0, 1), (1, 2)]).unwrap();
        let demands = demands_from_activation(&active, 8.0).unwrap();
        assert_eq!(demands.demands().len(), 3); // agent 3 idles
        let d1 = &demands.demands()[1];
        assert_eq!(d1.source, 1);
        assert_eq!(d1.destinations, BTreeSet::from([0, 2]));
    }

    #[test]
    fn zero_delay_completion_is_closed_form() {
        // Two flows of 10 bits share a capacity-5 category; one also uses a
        // private capacity-100 category.
        let loads = vec![
            FlowLoad { bits: 10.0, delay: 0.0, units: vec![1.0, 0.0] },
            FlowLoad { bits: 10.0, delay: 0.0, units: vec![1.0, 1.0] },
        ];
        let tau = smallest_feasible_tau(&loads, &[5.0, 100.0]).unwrap();
        assert_eq!(tau, 4.0); // 20 bits through 5 bps
    }

    #[test]
    fn delayed_completion_matches_hand_bisection() {
        // One flow, one category: kappa/(tau - delay) = cap
        // -> tau = delay + kappa/cap = 0.5 + 2.
        let loads = vec![FlowLoad { bits: 10.0, delay: 0.5, units: vec![1.0] }];
        let tau: f64 = smallest_feasible_tau(&loads, &[5.0]).unwrap();
        assert!((tau - 2.5).abs() < 1e-8, "tau = {tau}");
    }

    #[test]
    fn direct_schedule_time_equals_the_reference_bound() {
        let active = ActivationSet::new(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        let net = OverlayNet::complete(3, 0.01);
        let view = view_of(vec![
            (vec![(0, 1), (1, 0), (1, 2)], 100.0),
            (vec![(2, 1), (0, 2), (2, 0)], 50.0),
        ]);
        let bound = tau_bar(&active, &net, &view, 64.0).unwrap();
        let schedule = direct_path_schedule(&active, &net, &view, 64.0).unwrap();
        assert_eq!(schedule.tau, bound);
        assert_eq!(schedule.flows.len(), 6);
        // The unicast split serves each destination separately, so flows do
        // not match multicast demands one-to-one; check capacity directly.
        let sys = CategorySystem::from_view(&view);
        let mut load = vec![0.0; sys.len()];
        for f in &schedule.flows {
            for &(i, j) in &f.tree {
                for &c in sys.membership(i, j) {
                    load[c] += f.rate;
                }
            }
            assert!(f.completion() <= schedule.tau * (1.0 + 1e-7));
        }
        for c in 0..sys.len() {
            assert!(load[c] <= sys.capacities[c] * (1.0 + 1e-7));
        }
    }

    #[test]
    fn equal_share_matches_simulation_of_the_direct_plan() {
        let active = ActivationSet::new(3, [(0, 1), (1, 2)]).unwrap();
        let net = OverlayNet::complete(3, 0.0);
        let keys = vec![
            (vec![(0, 1), (1, 0), (1, 2)], 30.0),
            (vec![(2, 1)], 7.0),
        ];
        let view = view_of(keys.clone());
        let share = equal_share_time(&active, &net, &view, 12.0).unwrap();
        // By hand: category 0 has 3 users -> 10 each; category 1 has 1 user
        // -> 7. Slowest is 12/7.
        assert!((share - 12.0 / 7.0).abs() < 1e-12);

        // Fair-share simulation of the direct plan reproduces it exactly.
        let schedule = direct_path_schedule(&active, &net, &view, 12.0).unwrap();
        let truth = crate::underlay::CategoryTable::from_categories(
            keys.into_iter()
                .map(|(key, capacity)| crate::underlay::Category {
                    key: key.into_iter().collect(),
                    underlay_links: Vec::new(),
                    capacity,
                })
                .collect(),
        )
        .unwrap();
        assert_eq!(simulate_completion(&schedule, &truth), share);
    }

    #[test]
    fn validate_rejects_overloaded_and_malformed_schedules() {
        let active = ActivationSet::new(2, [(0, 1)]).unwrap();
        let net = OverlayNet::complete(2, 0.0);
        let view = view_of(vec![(vec![(0, 1), (1, 0)], 10.0)]);
        let demands = demands_from_activation(&active, 5.0).unwrap();
        let mut schedule = direct_path_schedule(&active, &net, &view, 5.0).unwrap();
        let check = validate_schedule(&schedule, &demands, &net, &view).unwrap();
        assert!(check.peak_utilization <= 1.0 + 1e-9);

        schedule.flows[0].rate = 1e9; // blow the category budget
        assert!(validate_schedule(&schedule, &demands, &net, &view).is_err());
    }

    #[test]
    fn empty_demands_schedule_to_zero_time() {
        let net = OverlayNet::complete(3, 0.0);
        let view = view_of(vec![(vec![(0, 1)], 1.0)]);
        let demands = DemandSet::<f64>::new(3, Vec::new()).unwrap();
        let s = min_time_schedule(&demands, &net, &view, &ScheduleOptions::default()).unwrap();
        assert_eq!(s.tau, 0.0);
        assert!(s.flows.is_empty());
    }
}
