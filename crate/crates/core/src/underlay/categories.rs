//! Grouping of underlay links into capacity categories.
//!
//! Two underlay links that carry exactly the same set of overlay links are
//! indistinguishable to the overlay and can be summarized by a single
//! capacity number: the smallest capacity among them. The resulting table,
//! keyed by sets of *directed* overlay links, is everything the schedule and
//! topology designers need to know about the underlay — and it is also the
//! natural unit of error for what network measurements can realistically
//! infer, which [`perturb_view`] models.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{AgentId, OverlaySpec, RoutingTable, UnderlayGraph};

/// Set of directed overlay links that identifies one category.
pub type CategoryKey = BTreeSet<(AgentId, AgentId)>;

/// One category of the exact table: its key, the underlay links it contains,
/// and the binding capacity.
#[derive(Debug, Clone)]
pub struct Category<F> {
    pub key: CategoryKey,
    /// Underlay link ids whose traversing overlay-link set equals `key`.
    pub underlay_links: Vec<usize>,
    /// Smallest capacity among `underlay_links`, in bits per second.
    pub capacity: F,
}

/// Exact category table derived from ground-truth routing knowledge.
#[derive(Debug, Clone)]
pub struct CategoryTable<F> {
    categories: Vec<Category<F>>,
}

impl<F: Scalar> CategoryTable<F> {
    /// Assembles a table from explicit categories, e.g. when the ground
    /// truth is stated directly rather than derived from routing.
    pub fn from_categories(mut categories: Vec<Category<F>>) -> Result<Self> {
        for cat in &categories {
            if cat.key.is_empty() {
                return Err(Error::Invalid("category with empty key".into()));
            }
            if !(cat.capacity > F::zero()) {
                return Err(Error::Invalid(format!(
                    "category capacity must be positive, got {}",
                    cat.capacity
                )));
            }
        }
        categories.sort_by(|a, b| a.key.cmp(&b.key));
        if categories.windows(2).any(|w| w[0].key == w[1].key) {
            return Err(Error::Invalid("two categories share a key".into()));
        }
        Ok(Self { categories })
    }

    pub fn categories(&self) -> &[Category<F>] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    /// The ground-truth table seen as an (exact) inferred view.
    pub fn as_view(&self) -> InferredView<F> {
        InferredView {
            categories: self
                .categories
                .iter()
                .map(|c| ViewCategory { key: c.key.clone(), capacity: c.capacity })
                .collect(),
            provenance: Provenance::Exact,
        }
    }
}

/// Groups underlay links by the set of directed overlay links routed across
/// them. Links carrying no overlay traffic are irrelevant to the overlay and
/// omitted.
pub fn derive_categories<F: Scalar>(
    underlay: &UnderlayGraph<F>,
    overlay: &OverlaySpec,
    routing: &RoutingTable<F>,
) -> CategoryTable<F> {
    let mut traversers: Vec<CategoryKey> = vec![BTreeSet::new(); underlay.links().len()];
    for (i, j) in overlay.directed_links() {
        let route = routing
            .route(i, j)
            .expect("routing table covers every ordered agent pair");
        for &link_id in &route.links {
            traversers[link_id].insert((i, j));
        }
    }

    let mut groups: BTreeMap<CategoryKey, Vec<usize>> = BTreeMap::new();
    for (link_id, key) in traversers.into_iter().enumerate() {
        if !key.is_empty() {
            groups.entry(key).or_default().push(link_id);
        }
    }

    let categories = groups
        .into_iter()
        .map(|(key, underlay_links)| {
            let capacity = underlay_links
                .iter()
                .map(|&l| underlay.link(l).capacity)
                .fold(F::infinity(), F::min);
            Category { key, underlay_links, capacity }
        })
        .collect();
    CategoryTable { categories }
}

/// How an [`InferredView`] was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Provenance {
    Exact,
    Perturbed,
}

/// A single category as seen from the overlay: key plus estimated capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewCategory<F> {
    pub key: CategoryKey,
    pub capacity: F,
}

/// The overlay's possibly imperfect knowledge of the category table.
#[derive(Debug, Clone)]
pub struct InferredView<F> {
    categories: Vec<ViewCategory<F>>,
    provenance: Provenance,
}

impl<F: Scalar> InferredView<F> {
    /// Builds a view directly from key/capacity pairs, e.g. in tests or when
    /// capacities come from an external measurement stage.
    pub fn from_parts(mut categories: Vec<ViewCategory<F>>, provenance: Provenance) -> Result<Self> {
        for cat in &categories {
            if cat.key.is_empty() {
                return Err(Error::Invalid("view category with empty key".into()));
            }
            if !(cat.capacity > F::zero()) {
                return Err(Error::Invalid(format!(
                    "view category capacity must be positive, got {}",
                    cat.capacity
                )));
            }
        }
        categories.sort_by(|a, b| a.key.cmp(&b.key));
        for pair in categories.windows(2) {
            if pair[0].key == pair[1].key {
                return Err(Error::Invalid("duplicate view category key".into()));
            }
        }
        Ok(Self { categories, provenance })
    }

    pub fn categories(&self) -> &[ViewCategory<F>] {
        &self.categories
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// True when scheduling against this view can never overrun the real
    /// network: every real category is present with an estimate no larger
    /// than its true capacity. Views produced by uniform down-scaling keep
    /// this property; dropped categories break it.
    pub fn is_safe_for(&self, exact: &CategoryTable<F>) -> bool {
        exact.categories().iter().all(|truth| {
            self.categories
                .iter()
                .any(|est| est.key == truth.key && est.capacity <= truth.capacity)
        })
    }
}

/// Measurement-error models applied to the exact table.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TomographyMode {
    /// Perfect knowledge.
    Exact,
    /// Each category is independently deleted with probability `p_drop`
    /// (missed by measurement). The result may under-constrain schedules.
    DropCategories { p_drop: f64 },
    /// All capacities multiplied by `factor`. Factors at most 1 yield a
    /// conservative view that is still safe to schedule against.
    ScaleCapacity { factor: f64 },
}

/// Derives an inferred view from the exact table under a measurement-error
/// model. Deterministic for a given `(mode, seed)` pair.
pub fn perturb_view<F: Scalar>(
    exact: &CategoryTable<F>,
    mode: TomographyMode,
    seed: u64,
) -> Result<InferredView<F>> {
    let full: Vec<ViewCategory<F>> = exact
        .categories()
        .iter()
        .map(|c| ViewCategory { key: c.key.clone(), capacity: c.capacity })
        .collect();
    match mode {
        TomographyMode::Exact => Ok(InferredView { categories: full, provenance: Provenance::Exact }),
        TomographyMode::DropCategories { p_drop } => {
            if !(0.0..=1.0).contains(&p_drop) {
                return Err(Error::Invalid(format!(
                    "drop probability must lie in [0, 1], got {p_drop}"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let kept = full
                .into_iter()
                .filter(|_| rng.gen::<f64>() >= p_drop)
                .collect();
            Ok(InferredView { categories: kept, provenance: Provenance::Perturbed })
        }
        TomographyMode::ScaleCapacity { factor } => {
            if !(factor > 0.0) {
                return Err(Error::Invalid(format!(
                    "capacity scale factor must be positive, got {factor}"
                )));
            }
            let scale = F::of(factor);
            let scaled = full
                .into_iter()
                .map(|c| ViewCategory { key: c.key, capacity: c.capacity * scale })
                .collect();
            Ok(InferredView { categories: scaled, provenance: Provenance::Perturbed })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::underlay::{shortest_path_routing, UnderlayLink};

    /// Two agents whose connecting paths share a middle link with each
    /// other: a0 -> a1 uses links (0,1),(1,2); a1 -> a0 uses (2,1),(1,0).
    fn shared_middle() -> (UnderlayGraph<f64>, OverlaySpec) {
        let names = (0..3).map(|i| format!("n{i}")).collect();
        let caps = [(0usize, 1usize, 8.0), (1, 2, 2.0), (2, 1, 4.0), (1, 0, 16.0)];
        let links = caps
            .iter()
            .map(|&(a, b, c)| UnderlayLink { src: a, dst: b, capacity: c, delay: 0.0 })
            .collect();
        let underlay = UnderlayGraph::new(names, links).unwrap();
        let overlay =
            OverlaySpec::clique(vec!["a0".into(), "a1".into()], vec![0, 2]).unwrap();
        (underlay, overlay)
    }

    #[test]
    fn groups_links_by_traversing_overlay_set() {
        let (underlay, overlay) = shared_middle();
        let routing = shortest_path_routing(&underlay, &overlay).unwrap();
        let table = derive_categories(&underlay, &overlay, &routing);
        // Each direction uses its own two links; no sharing across overlay
        // links here, so each category key is a singleton and capacity is the
        // min along the private segment.
        assert_eq!(table.len(), 2);
        let forward: CategoryKey = [(0, 1)].into_iter().collect();
        let backward: CategoryKey = [(1, 0)].into_iter().collect();
        let by_key: BTreeMap<_, _> = table
            .categories()
            .iter()
            .map(|c| (c.key.clone(), c.capacity))
            .collect();
        assert_eq!(by_key[&forward], 2.0);
        assert_eq!(by_key[&backward], 4.0);
    }

    #[test]
    fn categories_partition_used_links() {
        let (underlay, overlay) = shared_middle();
        let routing = shortest_path_routing(&underlay, &overlay).unwrap();
        let table = derive_categories(&underlay, &overlay, &routing);
        let mut seen = BTreeSet::new();
        for cat in table.categories() {
            for &l in &cat.underlay_links {
                assert!(seen.insert(l), "link {l} appears in two categories");
            }
        }
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn exact_view_reproduces_table() {
        let (underlay, overlay) = shared_middle();
        let routing = shortest_path_routing(&underlay, &overlay).unwrap();
        let table = derive_categories(&underlay, &overlay, &routing);
        let view = perturb_view(&table, TomographyMode::Exact, 9).unwrap();
        assert_eq!(view.provenance(), Provenance::Exact);
        assert_eq!(view.categories().len(), table.len());
        assert!(view.is_safe_for(&table));
    }

    #[test]
    fn scaling_down_stays_safe_and_dropping_does_not() {
        let (underlay, overlay) = shared_middle();
        let routing = shortest_path_routing(&underlay, &overlay).unwrap();
        let table = derive_categories(&underlay, &overlay, &routing);

        let scaled =
            perturb_view(&table, TomographyMode::ScaleCapacity { factor: 0.9 }, 0).unwrap();
        assert_eq!(scaled.provenance(), Provenance::Perturbed);
        assert!(scaled.is_safe_for(&table));

        let dropped =
            perturb_view(&table, TomographyMode::DropCategories { p_drop: 1.0 }, 0).unwrap();
        assert_eq!(dropped.provenance(), Provenance::Perturbed);
        assert!(dropped.categories().is_empty());
        assert!(!dropped.is_safe_for(&table));
    }

    #[test]
    fn drop_is_deterministic_per_seed() {
        let (underlay, overlay) = shared_middle();
        let routing = shortest_path_routing(&underlay, &overlay).unwrap();
        let table = derive_categories(&underlay, &overlay, &routing);
        let a = perturb_view(&table, TomographyMode::DropCategories { p_drop: 0.5 }, 11).unwrap();
        let b = perturb_view(&table, TomographyMode::DropCategories { p_drop: 0.5 }, 11).unwrap();
        assert_eq!(a.categories(), b.categories());
    }

    #[test]
    fn rejects_bad_parameters() {
        let (underlay, overlay) = shared_middle();
        let routing = shortest_path_routing(&underlay, &overlay).unwrap();
        let table = derive_categories(&underlay, &overlay, &routing);
        assert!(perturb_view(&table, TomographyMode::DropCategories { p_drop: 1.5 }, 0).is_err());
        assert!(perturb_view(&table, TomographyMode::ScaleCapacity { factor: 0.0 }, 0).is_err());
    }
}
