//! Search algorithms over activation sets.
//!
//! All searches answer the same question: among subsets of the candidate
//! links whose per-iteration communication time [`tau_bar`] fits a budget
//! `beta`, which mixes best (smallest [`rho_bar`])? [`exact_activation`]
//! answers it exactly by branch-and-bound, the others trade optimality for
//! speed. [`bilevel_search`] wraps any of them in an outer sweep over
//! `beta`, scoring each answer by predicted wall-clock time to convergence
//! (iterations times seconds per iteration).

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, symmetric_eigenvalues};
use crate::mixing::ConvergenceParams;
use crate::scalar::Scalar;
use crate::schedule::{smallest_feasible_tau_for_links, tau_bar, LinkLoads, OverlayNet};
use crate::underlay::{InferredView, OverlaySpec, RoutingTable};

use super::{k_bar, rho_bar, weighted_laplacian, ActivationSet, InitialWeights};

/// Two answers tie when their deviations differ by no more than this;
/// ties go to fewer links, then to the lexicographically smallest
/// inclusion vector (excluded before included, links in canonical order).
const TIE_TOL: f64 = 1e-12;

/// Budgets for the subgradient-based searches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBudget {
    /// Projected-subgradient iterations per relaxation solve.
    pub relaxation_iters: usize,
    /// Iterations per inner solve during the pinning loop (warm-started).
    pub pinning_iters: usize,
    /// Exact-penalty weight on normalized capacity violations.
    pub penalty: f64,
    /// Initial step size; decays as `step / sqrt(t + 1)`.
    pub step: f64,
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self { relaxation_iters: 1200, pinning_iters: 400, penalty: 4.0, step: 2.0 }
    }
}

/// Does a fractional activation fit the capacity view within the budget?
///
/// Each fractionally activated link asks each capacity category for
/// `y_e * units * bits / (beta - delay)` — the bandwidth it needs to finish
/// by `beta` — and the answer is whether every category can grant all
/// requests at once. For a 0/1 vector this is exactly `tau_bar(set) <= beta`.
pub fn feasible_under_beta<F: Scalar>(
    candidates: &ActivationSet,
    y: &[F],
    beta: F,
    net: &OverlayNet<F>,
    view: &InferredView<F>,
    bits: F,
) -> Result<bool> {
    let links: Vec<(usize, usize)> = candidates.links().iter().copied().collect();
    if y.len() != links.len() {
        return Err(Error::Dimension(format!(
            "activation vector has {} entries for {} candidate links",
            y.len(),
            links.len()
        )));
    }
    if !(beta > F::zero()) {
        return Err(Error::Invalid(format!("budget must be positive, got {beta}")));
    }
    let loads = LinkLoads::new(&links, net, view, bits)?;
    let (coef, capacities, forbidden) = loads.coefficients_at(beta);
    let mut used = vec![F::zero(); capacities.len()];
    for (e, &ye) in y.iter().enumerate() {
        if !(ye > F::zero()) {
            continue;
        }
        if forbidden[e] {
            return Ok(false);
        }
        for &(c, w) in &coef[e] {
            used[c] += ye * w;
        }
    }
    Ok(used.iter().zip(&capacities).all(|(&u, &cap)| u <= cap))
}

// ---------------------------------------------------------------------------
// exact search
// ---------------------------------------------------------------------------

/// Exact minimizer of [`rho_bar`] over feasible subsets, by depth-first
/// branch-and-bound in canonical link order.
///
/// Feasibility (`tau_bar <= beta`) is monotone — adding links only adds
/// load — so an infeasible partial set prunes its whole subtree. The
/// deviation bound combines the two monotone branches: the connectivity
/// term can only be as good as with every undecided link included, and the
/// top-eigenvalue term only as good as with every undecided link excluded.
/// Subtrees are pruned only when they provably cannot beat the incumbent
/// under the tie rules, so the returned set is exactly the tie-broken
/// optimum. When nothing nonempty fits the budget the result is the empty
/// set (whose deviation is one).
pub fn exact_activation<F: Scalar>(
    candidates: &ActivationSet,
    w0: &InitialWeights<F>,
    beta: F,
    net: &OverlayNet<F>,
    view: &InferredView<F>,
    bits: F,
) -> Result<ActivationSet> {
    let links: Vec<(usize, usize)> = candidates.links().iter().copied().collect();
    let loads = LinkLoads::new(&links, net, view, bits)?;
    let m = candidates.agents();

    struct Best<F> {
        rho: F,
        len: usize,
        chosen: Vec<bool>,
    }
    let mut best: Option<Best<F>> = None;

    struct Frame<'a, F: Scalar> {
        links: &'a [(usize, usize)],
        loads: &'a LinkLoads<F>,
        w0: &'a InitialWeights<F>,
        beta: F,
        m: usize,
    }
    let frame = Frame { links: &links, loads: &loads, w0, beta, m };

    fn better<F: Scalar>(rho: F, len: usize, chosen: &[bool], inc: &Best<F>) -> bool {
        let tol = F::of(TIE_TOL);
        if rho < inc.rho - tol {
            return true;
        }
        if rho > inc.rho + tol {
            return false;
        }
        (len, chosen) < (inc.len, inc.chosen.as_slice())
    }

    fn dfs<F: Scalar>(
        idx: usize,
        chosen: &mut Vec<bool>,
        included: &mut Vec<usize>,
        frame: &Frame<'_, F>,
        best: &mut Option<Best<F>>,
    ) -> Result<()> {
        // Feasibility of what is already included.
        let tau = smallest_feasible_tau_for_links(frame.loads, included)?;
        if tau > frame.beta {
            return Ok(());
        }
        if idx == frame.links.len() {
            let set = set_of(frame.m, frame.links, chosen);
            let rho = rho_bar(&set, frame.w0);
            let len = included.len();
            let replace = match best {
                None => true,
                Some(inc) => better(rho, len, chosen, inc),
            };
            if replace {
                *best = Some(Best { rho, len, chosen: chosen.clone() });
            }
            return Ok(());
        }

        if let Some(inc) = best {
            // Most optimistic completion: connectivity with everything
            // still undecided included, top eigenvalue with it excluded.
            let mut optimistic = chosen.clone();
            for c in optimistic.iter_mut().skip(idx) {
                *c = true;
            }
            let with_all = set_of(frame.m, frame.links, &optimistic);
            let lam2 =
                symmetric_eigenvalues(&weighted_laplacian(&with_all, frame.w0)).expect("square")
                    [1];
            let with_none = set_of(frame.m, frame.links, chosen);
            let evals = symmetric_eigenvalues(&weighted_laplacian(&with_none, frame.w0))
                .expect("square");
            let bound = (F::one() - lam2).max(evals[frame.m - 1] - F::one());
            let tol = F::of(TIE_TOL);
            if bound > inc.rho + tol {
                return Ok(());
            }
            if bound >= inc.rho - tol && included.len() > inc.len {
                // Cannot beat the deviation, and every completion carries
                // at least the links already included: the tie is lost.
                return Ok(());
            }
        }

        chosen[idx] = false;
        dfs(idx + 1, chosen, included, frame, best)?;
        chosen[idx] = true;
        included.push(idx);
        dfs(idx + 1, chosen, included, frame, best)?;
        included.pop();
        chosen[idx] = false;
        Ok(())
    }

    let mut chosen = vec![false; links.len()];
    let mut included = Vec::new();
    dfs(0, &mut chosen, &mut included, &frame, &mut best)?;
    let best = best.expect("the empty set is always feasible");
    Ok(set_of(m, &links, &best.chosen))
}

fn set_of(m: usize, links: &[(usize, usize)], chosen: &[bool]) -> ActivationSet {
    ActivationSet::new(
        m,
        links
            .iter()
            .zip(chosen)
            .filter_map(|(&l, &c)| c.then_some(l)),
    )
    .expect("links come from a validated set")
}

// ---------------------------------------------------------------------------
// relaxations
// ---------------------------------------------------------------------------

enum RelaxGoal {
    /// Minimize the deviation `max(1 - lambda_2, lambda_m - 1)`.
    Deviation,
    /// Maximize algebraic connectivity `lambda_2`.
    Connectivity,
}

/// Shared state of the continuous searches: fractional activations
/// `y in [0, 1]` per candidate link, with capacity violations charged
/// through an exact penalty.
struct Relaxation<'a, F: Scalar> {
    links: &'a [(usize, usize)],
    alpha: Vec<F>,
    m: usize,
    /// Bandwidth each link asks of each category when finishing within the
    /// budget: the per-link feasibility coefficients.
    coef: Vec<Vec<(usize, F)>>,
    capacities: Vec<F>,
    /// Links that cannot be activated at all within the budget.
    forbidden: Vec<bool>,
    penalty: F,
}

impl<'a, F: Scalar> Relaxation<'a, F> {
    fn new(
        links: &'a [(usize, usize)],
        w0: &InitialWeights<F>,
        m: usize,
        loads: &LinkLoads<F>,
        beta: F,
        penalty: F,
    ) -> Self {
        let alpha = links.iter().map(|&(i, j)| w0.get(i, j)).collect();
        let (coef, capacities, forbidden) = loads.coefficients_at(beta);
        Self { links, alpha, m, coef, capacities, forbidden, penalty }
    }

    fn laplacian(&self, y: &[F]) -> Array2<F> {
        let mut l = Array2::<F>::zeros((self.m, self.m));
        for (e, &(i, j)) in self.links.iter().enumerate() {
            let w = y[e] * self.alpha[e];
            l[(i, j)] -= w;
            l[(j, i)] -= w;
            l[(i, i)] += w;
            l[(j, j)] += w;
        }
        l
    }

    /// Penalized objective and its subgradient at `y` (for minimization).
    fn eval(&self, y: &[F], goal: &RelaxGoal) -> (F, Vec<F>) {
        let eig = symmetric_eigen(&self.laplacian(y)).expect("square");
        let lam2 = eig.values[1];
        let lam_m = eig.values[self.m - 1];
        let mut value;
        let mut grad = vec![F::zero(); y.len()];
        match goal {
            RelaxGoal::Deviation => {
                if F::one() - lam2 >= lam_m - F::one() {
                    value = F::one() - lam2;
                    let v = eig.vectors.column(1);
                    for (e, &(i, j)) in self.links.iter().enumerate() {
                        let d = v[i] - v[j];
                        grad[e] = -self.alpha[e] * d * d;
                    }
                } else {
                    value = lam_m - F::one();
                    let v = eig.vectors.column(self.m - 1);
                    for (e, &(i, j)) in self.links.iter().enumerate() {
                        let d = v[i] - v[j];
                        grad[e] = self.alpha[e] * d * d;
                    }
                }
            }
            RelaxGoal::Connectivity => {
                value = -lam2;
                let v = eig.vectors.column(1);
                for (e, &(i, j)) in self.links.iter().enumerate() {
                    let d = v[i] - v[j];
                    grad[e] = -self.alpha[e] * d * d;
                }
            }
        }
        // Exact penalty on normalized capacity violations.
        let mut used = vec![F::zero(); self.capacities.len()];
        for (e, cats) in self.coef.iter().enumerate() {
            for &(c, w) in cats {
                used[c] += y[e] * w;
            }
        }
        let mut violated = vec![false; self.capacities.len()];
        for (c, (&u, &cap)) in used.iter().zip(&self.capacities).enumerate() {
            if u > cap {
                value += self.penalty * (u - cap) / cap;
                violated[c] = true;
            }
        }
        for (e, cats) in self.coef.iter().enumerate() {
            for &(c, w) in cats {
                if violated[c] {
                    grad[e] += self.penalty * w / self.capacities[c];
                }
            }
        }
        (value, grad)
    }

    /// Projected subgradient descent from `y0`, respecting pins. Returns
    /// the best iterate by penalized value.
    fn solve(
        &self,
        y0: Vec<F>,
        pins: &[Option<bool>],
        goal: &RelaxGoal,
        iters: usize,
        step0: F,
    ) -> Vec<F> {
        let clamp = |y: &mut Vec<F>| {
            for (e, v) in y.iter_mut().enumerate() {
                *v = match pins[e] {
                    Some(true) => F::one(),
                    Some(false) => F::zero(),
                    None if self.forbidden[e] => F::zero(),
                    None => v.max(F::zero()).min(F::one()),
                };
            }
        };
        let mut y = y0;
        clamp(&mut y);
        let (mut best_value, _) = self.eval(&y, goal);
        let mut best = y.clone();
        for t in 0..iters {
            let (_, grad) = self.eval(&y, goal);
            let step = step0 / F::of(((t + 1) as f64).sqrt());
            for (v, g) in y.iter_mut().zip(&grad) {
                *v -= step * *g;
            }
            clamp(&mut y);
            let (value, _) = self.eval(&y, goal);
            if value < best_value {
                best_value = value;
                best = y.clone();
            }
        }
        best
    }

    /// Greedy rounding: activate links in order of decreasing fractional
    /// value (ties by canonical order), keeping each one only if the budget
    /// still holds with it. The result is feasible by construction.
    fn round(&self, y: &[F], beta: F, loads: &LinkLoads<F>) -> Result<Vec<usize>> {
        let mut order: Vec<usize> = (0..y.len()).filter(|&e| !self.forbidden[e]).collect();
        order.sort_by(|&a, &b| y[b].partial_cmp(&y[a]).expect("finite").then(a.cmp(&b)));
        let mut chosen: Vec<usize> = Vec::new();
        for e in order {
            chosen.push(e);
            let tau = smallest_feasible_tau_for_links(loads, &chosen)?;
            if tau > beta {
                chosen.pop();
            }
        }
        chosen.sort_unstable();
        Ok(chosen)
    }
}

/// Continuous relaxation of the deviation objective: fractional activations
/// found by projected subgradient descent with an exact capacity penalty,
/// then rounded greedily in order of decreasing fraction while the budget
/// holds. Never returns an infeasible set.
pub fn relaxation_rho<F: Scalar>(
    candidates: &ActivationSet,
    w0: &InitialWeights<F>,
    beta: F,
    net: &OverlayNet<F>,
    view: &InferredView<F>,
    bits: F,
    budget: &SearchBudget,
) -> Result<ActivationSet> {
    run_relaxation(candidates, w0, beta, net, view, bits, budget, RelaxGoal::Deviation)
}

/// Continuous relaxation maximizing algebraic connectivity instead of
/// minimizing the full deviation — a concave surrogate, climbed by
/// projected supergradient ascent and rounded the same greedy way. Cheaper
/// to steer and just as good whenever small uniform initial weights keep
/// the top eigenvalue tame.
pub fn relaxation_lambda<F: Scalar>(
    candidates: &ActivationSet,
    w0: &InitialWeights<F>,
    beta: F,
    net: &OverlayNet<F>,
    view: &InferredView<F>,
    bits: F,
    budget: &SearchBudget,
) -> Result<ActivationSet> {
    run_relaxation(candidates, w0, beta, net, view, bits, budget, RelaxGoal::Connectivity)
}

#[allow(clippy::too_many_arguments)]
fn run_relaxation<F: Scalar>(
    candidates: &ActivationSet,
    w0: &InitialWeights<F>,
    beta: F,
    net: &OverlayNet<F>,
    view: &InferredView<F>,
    bits: F,
    budget: &SearchBudget,
    goal: RelaxGoal,
) -> Result<ActivationSet> {
    let links: Vec<(usize, usize)> = candidates.links().iter().copied().collect();
    let loads = LinkLoads::new(&links, net, view, bits)?;
    let relax =
        Relaxation::new(&links, w0, candidates.agents(), &loads, beta, F::of(budget.penalty));
    let pins = vec![None; links.len()];
    let y0 = vec![F::of(0.5); links.len()];
    let y = relax.solve(y0, &pins, &goal, budget.relaxation_iters, F::of(budget.step));
    let chosen = relax.round(&y, beta, &loads)?;
    ActivationSet::new(candidates.agents(), chosen.into_iter().map(|e| links[e]))
}

// ---------------------------------------------------------------------------
// successive pinning
// ---------------------------------------------------------------------------

/// Successive convex approximation. Each round solves the continuous
/// deviation relaxation under the current pins (warm-started), then:
///
/// * if thresholding the fractions at `epsilon` already fits the budget,
///   that set is the answer;
/// * otherwise the largest-fraction link that still fits on top of the
///   pinned-in set is pinned in, the smallest-fraction link is pinned out,
///   and the loop continues — so it ends within `ceil(|links| / 2)` rounds.
///
/// When no link can be pinned in any more the pinned-in set itself is the
/// answer. Every addition is budget-checked, so the result is always
/// feasible. Argmax/argmin ties go to the canonical link order.
#[allow(clippy::too_many_arguments)]
pub fn sca_activation<F: Scalar>(
    candidates: &ActivationSet,
    w0: &InitialWeights<F>,
    beta: F,
    net: &OverlayNet<F>,
    view: &InferredView<F>,
    bits: F,
    epsilon: F,
    budget: &SearchBudget,
) -> Result<ActivationSet> {
    if !(epsilon > F::zero() && epsilon < F::one()) {
        return Err(Error::Invalid(format!(
            "threshold must lie strictly between zero and one, got {epsilon}"
        )));
    }
    let links: Vec<(usize, usize)> = candidates.links().iter().copied().collect();
    let loads = LinkLoads::new(&links, net, view, bits)?;
    let relax =
        Relaxation::new(&links, w0, candidates.agents(), &loads, beta, F::of(budget.penalty));

    let m = candidates.agents();
    let finish = |chosen: Vec<usize>| -> Result<ActivationSet> {
        ActivationSet::new(m, chosen.into_iter().map(|e| links[e]))
    };

    let mut pins: Vec<Option<bool>> = vec![None; links.len()];
    let mut y = vec![F::of(0.5); links.len()];
    let rounds = links.len().div_ceil(2).max(1);
    for round in 0..rounds {
        if pins.iter().all(|p| p.is_some()) {
            break;
        }
        let iters = if round == 0 { budget.relaxation_iters } else { budget.pinning_iters };
        y = relax.solve(y, &pins, &RelaxGoal::Deviation, iters, F::of(budget.step));

        // Thresholding already feasible? Done.
        let rounded: Vec<usize> = (0..links.len())
            .filter(|&e| {
                pins[e] == Some(true)
                    || (pins[e].is_none() && !relax.forbidden[e] && y[e] >= epsilon)
            })
            .collect();
        if smallest_feasible_tau_for_links(&loads, &rounded)? <= beta {
            return finish(rounded);
        }

        // Pin in the largest fraction that still fits on the pinned-in set.
        let pinned_in: Vec<usize> =
            (0..links.len()).filter(|&e| pins[e] == Some(true)).collect();
        let mut open: Vec<usize> = (0..links.len())
            .filter(|&e| pins[e].is_none() && !relax.forbidden[e])
            .collect();
        open.sort_by(|&a, &b| y[b].partial_cmp(&y[a]).expect("finite").then(a.cmp(&b)));
        let mut pinned_one = None;
        for e in open {
            let mut trial = pinned_in.clone();
            trial.push(e);
            if smallest_feasible_tau_for_links(&loads, &trial)? <= beta {
                pinned_one = Some(e);
                break;
            }
        }
        match pinned_one {
            // Nothing fits any more: the pinned-in set is the answer.
            None => return finish(pinned_in),
            Some(e) => pins[e] = Some(true),
        }

        // Pin out the smallest fraction.
        let mut down: Option<usize> = None;
        for e in 0..links.len() {
            if pins[e].is_none() && down.map_or(true, |cur| y[e] < y[cur]) {
                down = Some(e);
            }
        }
        if let Some(e) = down {
            pins[e] = Some(false);
        }
    }
    finish((0..links.len()).filter(|&e| pins[e] == Some(true)).collect())
}

// ---------------------------------------------------------------------------
// greedy spectral growth
// ---------------------------------------------------------------------------

/// Greedy activation by spectral scores: repeatedly add the budget-feasible
/// link with the largest first-order connectivity gain,
/// `alpha_ij * (v_i - v_j)^2` for the current Fiedler vector `v`, until no
/// feasible link remains. Ties go to the canonical link order.
pub fn greedy_fiedler<F: Scalar>(
    candidates: &ActivationSet,
    w0: &InitialWeights<F>,
    beta: F,
    net: &OverlayNet<F>,
    view: &InferredView<F>,
    bits: F,
) -> Result<ActivationSet> {
    let links: Vec<(usize, usize)> = candidates.links().iter().copied().collect();
    let loads = LinkLoads::new(&links, net, view, bits)?;
    let m = candidates.agents();

    let mut included: Vec<usize> = Vec::new();
    let mut active = ActivationSet::empty(m);
    loop {
        let v = fiedler_direction(&active, &links, w0);
        // Candidates by decreasing score, ties canonical; take the first
        // that still fits the budget.
        let mut order: Vec<(usize, F)> = links
            .iter()
            .enumerate()
            .filter(|(e, _)| !included.contains(e))
            .map(|(e, &(i, j))| {
                let d = v[i] - v[j];
                (e, w0.get(i, j) * d * d)
            })
            .collect();
        order.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then(a.0.cmp(&b.0)));
        let mut picked = None;
        for (e, _) in order {
            included.push(e);
            let tau = smallest_feasible_tau_for_links(&loads, &included)?;
            included.pop();
            if tau <= beta {
                picked = Some(e);
                break;
            }
        }
        match picked {
            Some(e) => {
                included.push(e);
                active = active.with_link(links[e].0, links[e].1);
            }
            None => break,
        }
    }
    Ok(active)
}

/// The direction along which mixing is currently weakest. For a connected
/// activation this is the Fiedler vector of its Laplacian. For a
/// disconnected one the second-smallest eigenvalue is zero and degenerate —
/// its eigenspace is spanned by the centered component indicators — and the
/// returned unit vector is the centered two-component indicator inside that
/// eigenspace maximizing the best candidate link's score
/// `alpha * (v_i - v_j)^2`: bridging components of sizes `s` and `t` can
/// score at most `alpha * (1/s + 1/t)`. Ties go to the canonical link
/// order, and the component holding the smallest agent id gets the positive
/// sign.
fn fiedler_direction<F: Scalar>(
    active: &ActivationSet,
    candidates: &[(usize, usize)],
    w0: &InitialWeights<F>,
) -> Vec<F> {
    let m = active.agents();
    if active.is_connected() {
        let eig = symmetric_eigen(&weighted_laplacian(active, w0)).expect("square");
        return eig.vectors.column(1).to_vec();
    }

    // Component label and size per agent.
    let mut comp = vec![usize::MAX; m];
    let mut sizes: Vec<usize> = Vec::new();
    for start in 0..m {
        if comp[start] != usize::MAX {
            continue;
        }
        let label = sizes.len();
        let mut stack = vec![start];
        comp[start] = label;
        let mut size = 1usize;
        while let Some(u) = stack.pop() {
            for v in active.neighbors(u) {
                if comp[v] == usize::MAX {
                    comp[v] = label;
                    size += 1;
                    stack.push(v);
                }
            }
        }
        sizes.push(size);
    }

    let mut pick: Option<(F, usize, usize)> = None;
    for &(i, j) in candidates {
        let (a, b) = (comp[i], comp[j]);
        if a == b {
            continue;
        }
        let score = w0.get(i, j)
            * (F::one() / F::of(sizes[a] as f64) + F::one() / F::of(sizes[b] as f64));
        if pick.as_ref().map_or(true, |&(s, _, _)| score > s) {
            pick = Some((score, a.min(b), a.max(b)));
        }
    }
    let (side_a, side_b) = match pick {
        Some((_, a, b)) => (a, b),
        // No candidate bridges anything; any eigenspace direction works and
        // the centered indicator of agent 0's component is the canonical
        // choice.
        None => (comp[0], usize::MAX),
    };

    let mut v: Vec<F> = vec![F::zero(); m];
    if side_b == usize::MAX {
        let inside = F::of(sizes[side_a] as f64);
        let total = F::of(m as f64);
        for (u, x) in v.iter_mut().enumerate() {
            *x = if comp[u] == side_a { F::one() - inside / total } else { -(inside / total) };
        }
    } else {
        // Centered on the pair, zero elsewhere; positive where the smallest
        // agent id lives.
        let first = comp
            .iter()
            .position(|&c| c == side_a || c == side_b)
            .expect("components are nonempty");
        let (pos, neg) = if comp[first] == side_a { (side_a, side_b) } else { (side_b, side_a) };
        let (sp, sn) = (F::of(sizes[pos] as f64), F::of(sizes[neg] as f64));
        for (u, x) in v.iter_mut().enumerate() {
            if comp[u] == pos {
                *x = sn;
            } else if comp[u] == neg {
                *x = -sp;
            }
        }
    }
    let norm = v.iter().map(|&x| x * x).sum::<F>().sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
    v
}

// ---------------------------------------------------------------------------
// fixed baselines
// ---------------------------------------------------------------------------

/// Fixed reference topologies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// Every candidate link.
    Clique,
    /// The cycle `0-1-...-(m-1)-0` over agent ids.
    Ring,
    /// A spanning tree of the candidate links, grown from agent 0 with
    /// cheap links first: fewest underlay hops, then smallest delay, then
    /// canonical order.
    Prim,
}

pub fn baseline_topology<F: Scalar>(
    kind: BaselineKind,
    overlay: &OverlaySpec,
    routing: &RoutingTable<F>,
) -> Result<ActivationSet> {
    let m = overlay.num_agents();
    let candidates = ActivationSet::from_overlay(overlay);
    match kind {
        BaselineKind::Clique => Ok(candidates),
        BaselineKind::Ring => {
            if m == 1 {
                return Ok(ActivationSet::empty(1));
            }
            let mut links = Vec::new();
            for i in 0..m {
                let j = (i + 1) % m;
                if i != j {
                    if !candidates.contains(i, j) {
                        return Err(Error::Invalid(format!(
                            "ring link ({i}, {j}) is not a candidate link"
                        )));
                    }
                    links.push((i, j));
                }
            }
            ActivationSet::new(m, links)
        }
        BaselineKind::Prim => {
            if m == 1 {
                return Ok(ActivationSet::empty(1));
            }
            let cost = |i: usize, j: usize| -> Result<(usize, F, (usize, usize))> {
                let route = routing.route(i, j).ok_or_else(|| Error::NoRoute {
                    from: overlay.agent_name(i).to_string(),
                    to: overlay.agent_name(j).to_string(),
                })?;
                Ok((route.hops(), route.delay, (i, j)))
            };
            let mut in_tree = vec![false; m];
            in_tree[0] = true;
            let mut links = Vec::new();
            for _ in 1..m {
                let mut best: Option<(usize, F, (usize, usize))> = None;
                for &(i, j) in candidates.links() {
                    if in_tree[i] == in_tree[j] {
                        continue;
                    }
                    let c = cost(i, j)?;
                    let replace = match &best {
                        None => true,
                        Some(b) => {
                            c.0 < b.0
                                || (c.0 == b.0 && c.1 < b.1)
                                || (c.0 == b.0 && c.1 == b.1 && c.2 < b.2)
                        }
                    };
                    if replace {
                        best = Some(c);
                    }
                }
                let (_, _, (i, j)) = best.ok_or_else(|| {
                    Error::Invalid("candidate links do not connect all agents".into())
                })?;
                in_tree[i] = true;
                in_tree[j] = true;
                links.push((i, j));
            }
            ActivationSet::new(m, links)
        }
    }
}

// ---------------------------------------------------------------------------
// bilevel sweep
// ---------------------------------------------------------------------------

/// Options of [`bilevel_search`].
#[derive(Debug, Clone, PartialEq)]
pub struct BilevelOptions<F> {
    /// Evaluate exactly these budgets instead of building a grid. No
    /// refinement happens around the winner; must be nonempty when given.
    pub grid: Option<Vec<F>>,
    /// Size of the automatic logarithmic grid between the cheapest single
    /// link's time and the full candidate set's time.
    pub grid_points: usize,
    /// Extra points inserted around the best automatic grid point.
    pub refinement_points: usize,
}

impl<F> Default for BilevelOptions<F> {
    fn default() -> Self {
        Self { grid: None, grid_points: 32, refinement_points: 8 }
    }
}

/// One evaluated budget point.
#[derive(Debug, Clone, PartialEq)]
pub struct BilevelPoint<F> {
    /// The budget handed to the solver.
    pub beta: F,
    pub set: ActivationSet,
    /// Communication time the returned set actually needs (at most `beta`
    /// for a well-behaved solver; the objective uses this, never `beta`).
    pub tau: F,
    pub rho: F,
    pub iterations: F,
    /// Predicted seconds to convergence: `iterations * tau`. Infinite when
    /// the set cannot mix.
    pub objective: F,
}

/// Outcome of [`bilevel_search`].
#[derive(Debug, Clone, PartialEq)]
pub struct BilevelResult<F> {
    pub best: BilevelPoint<F>,
    /// Every distinct evaluation, in evaluation order.
    pub evaluated: Vec<BilevelPoint<F>>,
}

/// Sweeps the communication budget over a grid, runs the given activation
/// solver at each point, and keeps the activation whose predicted time to
/// convergence — iterations times per-iteration communication time — is
/// smallest. The winner's budget is tightened to the communication time its
/// set actually needs, and its objective is at most that of every candidate
/// evaluated. Budgets whose sets cannot mix (disconnected or empty) score
/// infinity; if every budget does, the search fails.
#[allow(clippy::too_many_arguments)]
pub fn bilevel_search<F: Scalar>(
    candidates: &ActivationSet,
    w0: &InitialWeights<F>,
    net: &OverlayNet<F>,
    view: &InferredView<F>,
    bits: F,
    params: &ConvergenceParams<F>,
    solver: impl Fn(F) -> Result<ActivationSet>,
    options: &BilevelOptions<F>,
) -> Result<BilevelResult<F>> {
    if candidates.is_empty() {
        return Err(Error::Invalid("no candidate links to activate".into()));
    }
    let explicit = options.grid.is_some();
    let betas: Vec<F> = match &options.grid {
        Some(grid) if grid.is_empty() => {
            return Err(Error::Invalid("the budget grid must be nonempty".into()));
        }
        Some(grid) => grid.clone(),
        None => {
            let mut single_min = F::infinity();
            for &(i, j) in candidates.links() {
                let single = ActivationSet::new(candidates.agents(), [(i, j)])?;
                single_min = single_min.min(tau_bar(&single, net, view, bits)?);
            }
            let full = tau_bar(candidates, net, view, bits)?;
            let hi = full.max(F::of(1e-12));
            let lo = single_min.max(hi * F::of(1e-6));
            let n = options.grid_points.max(2);
            // The endpoints are used verbatim: a `ln`/`exp` round trip can
            // land one ulp below `hi`, which would make every budget on a
            // collapsed grid (`lo == hi`) strictly infeasible.
            (0..n)
                .map(|k| {
                    if k == 0 {
                        lo
                    } else if k == n - 1 {
                        hi
                    } else {
                        let t = F::of(k as f64) / F::of((n - 1) as f64);
                        (lo.ln() * (F::one() - t) + hi.ln() * t).exp()
                    }
                })
                .collect()
        }
    };

    let mut evaluated: Vec<BilevelPoint<F>> = Vec::new();
    let evaluate = |beta: F, evaluated: &mut Vec<BilevelPoint<F>>| -> Result<()> {
        let set = solver(beta)?;
        if evaluated.iter().any(|p| p.set == set) {
            return Ok(());
        }
        let (tau, rho, iterations) = if set.is_empty() {
            (F::zero(), F::one(), F::infinity())
        } else {
            let tau = tau_bar(&set, net, view, bits)?;
            let rho = rho_bar(&set, w0);
            (tau, rho, k_bar(&set, w0, params)?)
        };
        let objective = if iterations.is_infinite() { F::infinity() } else { iterations * tau };
        evaluated.push(BilevelPoint { beta, set, tau, rho, iterations, objective });
        Ok(())
    };

    for &beta in &betas {
        evaluate(beta, &mut evaluated)?;
    }
    let best_index = |points: &[BilevelPoint<F>]| -> Option<usize> {
        let mut best: Option<usize> = None;
        for (k, p) in points.iter().enumerate() {
            if p.objective.is_finite()
                && best.map_or(true, |b| p.objective < points[b].objective)
            {
                best = Some(k);
            }
        }
        best
    };

    if !explicit {
        if let Some(b) = best_index(&evaluated) {
            // Refine between the winning budget's grid neighbors.
            let center = evaluated[b].beta;
            let mut lo_r = *betas.first().expect("nonempty");
            let mut hi_r = *betas.last().expect("nonempty");
            for &beta in &betas {
                if beta < center {
                    lo_r = lo_r.max(beta);
                }
                if beta > center {
                    hi_r = hi_r.min(beta);
                }
            }
            let r = options.refinement_points;
            for k in 0..r {
                let t = F::of((k + 1) as f64) / F::of((r + 1) as f64);
                let beta = (lo_r.ln() * (F::one() - t) + hi_r.ln() * t).exp();
                evaluate(beta, &mut evaluated)?;
            }
        }
    }

    match best_index(&evaluated) {
        Some(b) => {
            let mut best = evaluated[b].clone();
            best.beta = best.tau; // tightened budget
            Ok(BilevelResult { best, evaluated })
        }
        None => Err(Error::Infeasible(
            "no budget on the grid yields an activation that can mix".into(),
        )),
    }
}
