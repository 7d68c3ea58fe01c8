//! Overlay topology design: which candidate links to activate.
//!
//! Activating more links mixes faster (fewer training iterations) but
//! spreads the shared underlay capacity thinner (longer iterations). This
//! module carries the link-subset type, the fixed initial weights under
//! which subsets are compared, and the spectral shortcut that scores a
//! subset without running the full weight optimizer. The search algorithms
//! that walk the subset lattice live in [`search`].

use std::collections::BTreeSet;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigenvalues;
use crate::mixing::{iterations_to_converge, ConvergenceParams};
use crate::scalar::Scalar;
use crate::underlay::OverlaySpec;

mod search;
pub use search::{
    baseline_topology, bilevel_search, exact_activation, feasible_under_beta, greedy_fiedler,
    relaxation_lambda, relaxation_rho, sca_activation, BaselineKind, BilevelOptions,
    BilevelPoint, BilevelResult, SearchBudget,
};

/// A subset of candidate overlay links, stored canonically (`i < j`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ActivationSet {
    agents: usize,
    links: BTreeSet<(usize, usize)>,
}

impl ActivationSet {
    pub fn new(agents: usize, links: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if agents == 0 {
            return Err(Error::Invalid("activation set over zero agents".into()));
        }
        let mut set = BTreeSet::new();
        for (i, j) in links {
            if i == j || i >= agents || j >= agents {
                return Err(Error::Invalid(format!(
                    "link ({i}, {j}) is not a valid agent pair (m = {agents})"
                )));
            }
            set.insert(if i < j { (i, j) } else { (j, i) });
        }
        Ok(Self { agents, links: set })
    }

    pub fn empty(agents: usize) -> Self {
        Self { agents, links: BTreeSet::new() }
    }

    /// The full candidate set of an overlay.
    pub fn from_overlay(overlay: &OverlaySpec) -> Self {
        Self {
            agents: overlay.num_agents(),
            links: overlay.base_links().iter().copied().collect(),
        }
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn links(&self) -> &BTreeSet<(usize, usize)> {
        &self.links
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        let key = if i < j { (i, j) } else { (j, i) };
        self.links.contains(&key)
    }

    pub fn with_link(&self, i: usize, j: usize) -> Self {
        let mut next = self.clone();
        next.links.insert(if i < j { (i, j) } else { (j, i) });
        next
    }

    pub fn without_link(&self, i: usize, j: usize) -> Self {
        let mut next = self.clone();
        next.links.remove(&if i < j { (i, j) } else { (j, i) });
        next
    }

    /// Both directions of every activated link, sorted.
    pub fn directed_links(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::with_capacity(2 * self.links.len());
        for &(i, j) in &self.links {
            out.push((i, j));
            out.push((j, i));
        }
        out.sort();
        out
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.agents];
        for &(i, j) in &self.links {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    pub fn neighbors(&self, agent: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for &(i, j) in &self.links {
            if i == agent {
                out.insert(j);
            } else if j == agent {
                out.insert(i);
            }
        }
        out
    }

    /// Whether every agent can reach every other through activated links.
    /// A single agent is trivially connected.
    pub fn is_connected(&self) -> bool {
        if self.agents <= 1 {
            return true;
        }
        let mut seen = vec![false; self.agents];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.agents
    }
}

/// Fixed link weights used when comparing subsets during the search, before
/// any per-subset weight optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialWeights<F> {
    uniform: F,
    overrides: std::collections::BTreeMap<(usize, usize), F>,
}

impl<F: Scalar> InitialWeights<F> {
    /// The default `1 / (2m - 1)` on every link, chosen so the spectral
    /// shortcut of [`rho_bar`] is exact for every subset (see
    /// [`connectivity_determines_rho`]).
    pub fn uniform(agents: usize) -> Self {
        Self {
            uniform: F::one() / F::of((2 * agents.max(1) - 1) as f64),
            overrides: Default::default(),
        }
    }

    pub fn with_value(value: F) -> Self {
        Self { uniform: value, overrides: Default::default() }
    }

    pub fn set(&mut self, i: usize, j: usize, value: F) {
        let key = if i < j { (i, j) } else { (j, i) };
        self.overrides.insert(key, value);
    }

    pub fn get(&self, i: usize, j: usize) -> F {
        let key = if i < j { (i, j) } else { (j, i) };
        self.overrides.get(&key).copied().unwrap_or(self.uniform)
    }
}

/// Weighted Laplacian of the activated links under the initial weights.
pub fn weighted_laplacian<F: Scalar>(active: &ActivationSet, w0: &InitialWeights<F>) -> Array2<F> {
    let m = active.agents();
    let mut l = Array2::<F>::zeros((m, m));
    for &(i, j) in active.links() {
        let a = w0.get(i, j);
        l[(i, j)] -= a;
        l[(j, i)] -= a;
        l[(i, i)] += a;
        l[(j, j)] += a;
    }
    l
}

/// Mixing deviation of `W = I - L` under the initial weights, computed from
/// the Laplacian spectrum: `max(1 - lambda_2, lambda_m - 1)`. Equals one
/// (or more) exactly when the activated links leave the agents disconnected
/// or over-weighted.
pub fn rho_bar<F: Scalar>(active: &ActivationSet, w0: &InitialWeights<F>) -> F {
    let m = active.agents();
    if m == 1 {
        return F::zero();
    }
    let evals = symmetric_eigenvalues(&weighted_laplacian(active, w0)).expect("square");
    (F::one() - evals[1]).max(evals[m - 1] - F::one())
}

/// Iteration count of the subset under the initial weights: the surrogate
/// of [`iterations_to_converge`] evaluated at [`rho_bar`]. Infinite for
/// disconnected subsets.
pub fn k_bar<F: Scalar>(
    active: &ActivationSet,
    w0: &InitialWeights<F>,
    params: &ConvergenceParams<F>,
) -> Result<F> {
    iterations_to_converge(rho_bar(active, w0).max(F::zero()), params)
}

/// Whether the initial weights are small enough that, for every subset of
/// the candidate links, the mixing deviation is governed by connectivity
/// alone (`rho_bar = 1 - lambda_2`, monotone under adding links).
///
/// The sufficient condition is `max_i sum_j a_ij + m * max_e a_e <= 1` over
/// the full candidate set: it forces every Laplacian eigenvalue below
/// `2 - lambda_2`, so the `lambda_m - 1` branch can never win. The default
/// uniform weights `1 / (2m - 1)` always satisfy it.
pub fn connectivity_determines_rho<F: Scalar>(
    candidates: &ActivationSet,
    w0: &InitialWeights<F>,
) -> bool {
    let m = candidates.agents();
    let mut max_row = F::zero();
    let mut max_single = F::zero();
    let mut rows = vec![F::zero(); m];
    for &(i, j) in candidates.links() {
        let a = w0.get(i, j);
        rows[i] += a;
        rows[j] += a;
        max_single = max_single.max(a);
    }
    for r in rows {
        max_row = max_row.max(r);
    }
    max_row + F::of(m as f64) * max_single <= F::one() + F::of(1e-12)
}
