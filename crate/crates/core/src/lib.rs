//! Design and evaluation of communication plans for decentralized learning
//! over bandwidth-limited networks.
//!
//! Agents running decentralized SGD sit on nodes of a physical network and
//! exchange model parameters along overlay links, each of which is routed
//! over shared physical paths. This crate answers the question *which links
//! should they use, with what weights, on what schedule* so that training
//! finishes earliest in wall-clock terms, and then simulates the result:
//!
//! * [`underlay`] — the physical network, routing, agent placement, and the
//!   capacity view the overlay can infer from shared bottlenecks;
//! * [`mixing`] — mixing matrices over activated links: spectral-deviation
//!   weight optimization with a certified gap, and the iteration-count
//!   surrogate tying spectral quality to convergence;
//! * [`schedule`] — per-iteration communication plans: the direct-path
//!   reference bound, relayed multicast schedules, and fair-share
//!   simulation against true capacities;
//! * [`topology`] — which links to activate under a per-iteration time
//!   budget: exact search, relaxations, a pinning heuristic, greedy
//!   connectivity, baselines, and the outer budget scan;
//! * [`dpsgd`] — desk-scale decentralized SGD on synthetic problems,
//!   producing traces over simulated wall clock;
//! * [`pipeline`] — the end-to-end run: scenario file in, `report.json`
//!   and per-algorithm trace CSVs out, plus cross-run comparison tables.
//!
//! Numeric code is generic over the scalar type through [`Scalar`]
//! (`f32` or `f64`); the aliases below fix `f64` for everyday use, and the
//! [`pipeline`] layer is concrete.

pub mod dpsgd;
pub mod error;
pub mod linalg;
pub mod mixing;
pub mod pipeline;
pub mod scalar;
pub mod schedule;
pub mod topology;
pub mod underlay;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// The physical network at `f64` precision.
pub type UnderlayGraph = underlay::UnderlayGraph<f64>;
/// Overlay routing table at `f64` precision.
pub type RoutingTable = underlay::RoutingTable<f64>;
/// Exact shared-bottleneck table at `f64` precision.
pub type CategoryTable = underlay::CategoryTable<f64>;
/// The overlay's capacity view at `f64` precision.
pub type InferredView = underlay::InferredView<f64>;
/// A validated scenario at `f64` precision.
pub type Scenario = underlay::Scenario<f64>;
/// Candidate-link incidence at `f64` precision.
pub type IncidenceMatrix = mixing::IncidenceMatrix<f64>;
/// Link weights at `f64` precision.
pub type LinkWeights = mixing::LinkWeights<f64>;
/// A mixing matrix at `f64` precision.
pub type MixingMatrix = mixing::MixingMatrix<f64>;
/// Iteration-surrogate constants at `f64` precision.
pub type ConvergenceParams = mixing::ConvergenceParams<f64>;
/// Overlay connectivity and delays at `f64` precision.
pub type OverlayNet = schedule::OverlayNet<f64>;
/// A communication plan at `f64` precision.
pub type Schedule = schedule::Schedule<f64>;
/// Initial link weights of the topology search at `f64` precision.
pub type InitialWeights = topology::InitialWeights<f64>;
/// A synthetic learning task at `f64` precision.
pub type LearningProblem = dpsgd::LearningProblem<f64>;
/// A training run at `f64` precision.
pub type TrainTrace = dpsgd::TrainTrace<f64>;
