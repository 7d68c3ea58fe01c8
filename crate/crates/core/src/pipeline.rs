//! The end-to-end pipeline: a scenario file in, comparable training runs
//! out.
//!
//! One run loads the underlay, derives the capacity view the overlay gets
//! to see, then for every requested algorithm designs an activation set,
//! optimizes its link weights, prices its communication schedule, and
//! trains D-PSGD against the simulated wall clock. Results land in
//! `report.json` plus one `trace_<algorithm>.csv` per algorithm, and
//! [`compare_report`] turns any number of reports over the same scenario
//! into a ranking table.
//!
//! This layer is deliberately concrete over `f64`: it owns file formats and
//! orchestration, not numerics.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dpsgd::{
    synthetic_problem, train, CommunicationDesign, LearningProblem, ProblemKind, StopRule,
    TrainConfig, TrainTrace,
};
use crate::error::{Error, Result};
use crate::mixing::{
    build_mixing, iterations_to_converge, metropolis_hastings_weights, optimize_weights,
    spectral_rho, ConvergenceParams, IncidenceMatrix,
};
use crate::schedule::{
    demands_from_activation, direct_path_schedule, min_time_schedule, simulate_completion,
    OverlayNet, ScheduleOptions,
};
use crate::topology::{
    baseline_topology, bilevel_search, exact_activation, greedy_fiedler, relaxation_lambda,
    relaxation_rho, sca_activation, ActivationSet, BaselineKind, BilevelOptions, InitialWeights,
    SearchBudget,
};
use crate::underlay::{
    derive_categories, load_scenario, perturb_view, shortest_path_routing, CategoryTable,
    InferredView, RoutingTable, Scenario, TomographyMode,
};

/// Gap tolerance handed to the weight optimizer.
const WEIGHT_TOL: f64 = 1e-6;
/// Rounding threshold of the pinning search. Inclusive rounding (keeping
/// links well below half activation) preserves connectivity under tight
/// budgets; the repair pass prunes whatever then overshoots the budget.
const SCA_EPSILON: f64 = 0.25;
/// Relative slack allowed before a simulated completion time is declared to
/// overrun its designed bound.
const SAFETY_SLACK: f64 = 1e-9;

/// Topology-design algorithms the pipeline can run side by side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    /// Pinning search on the relaxed activation problem.
    Sca,
    /// Branch-and-bound over all activation subsets. Exponential; small
    /// candidate sets only.
    Exact,
    /// One-shot relaxation minimizing the spectral deviation, rounded.
    RelaxRho,
    /// One-shot relaxation maximizing algebraic connectivity, rounded.
    RelaxLambda,
    /// Connectivity-greedy link addition.
    Greedy,
    /// All candidate links.
    Clique,
    /// A cycle through the agents.
    Ring,
    /// A shortest-path-tree baseline.
    Prim,
}

impl AlgorithmKind {
    /// Stable name used in configs, file names, and tables.
    pub fn name(self) -> &'static str {
        match self {
            Self::Sca => "sca",
            Self::Exact => "exact",
            Self::RelaxRho => "relax_rho",
            Self::RelaxLambda => "relax_lambda",
            Self::Greedy => "greedy",
            Self::Clique => "clique",
            Self::Ring => "ring",
            Self::Prim => "prim",
        }
    }

    fn is_baseline(self) -> Option<BaselineKind> {
        match self {
            Self::Clique => Some(BaselineKind::Clique),
            Self::Ring => Some(BaselineKind::Ring),
            Self::Prim => Some(BaselineKind::Prim),
            _ => None,
        }
    }
}

/// How link weights are chosen once an activation set is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// Spectral-deviation minimization with a certified gap.
    #[default]
    Optimal,
    /// Classical degree-based weights.
    Metropolis,
}

/// Synthetic problem families, by config name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProblemChoice {
    #[default]
    LogregGauss,
    Quadratic,
}

impl From<ProblemChoice> for ProblemKind {
    fn from(choice: ProblemChoice) -> Self {
        match choice {
            ProblemChoice::LogregGauss => ProblemKind::LogisticClusters,
            ProblemChoice::Quadratic => ProblemKind::Quadratic,
        }
    }
}

/// Training section of the pipeline config, with desk-scale defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSection {
    pub problem: ProblemChoice,
    /// Requested model dimension (the logistic family rounds it to a
    /// multiple of its class count).
    pub dim: usize,
    pub samples: usize,
    /// Dataset skew in `[0, 1]`.
    pub heterogeneity: f64,
    pub learning_rate: f64,
    pub batch: usize,
    pub max_iterations: usize,
    /// Stop when the running average of the squared global gradient norm
    /// falls below this.
    pub target_grad_norm: Option<f64>,
    /// Stop when the global loss falls below this. Mutually exclusive with
    /// `target_grad_norm`.
    pub target_loss: Option<f64>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            problem: ProblemChoice::LogregGauss,
            dim: 200,
            samples: 5000,
            heterogeneity: 0.5,
            learning_rate: 0.05,
            batch: 8,
            max_iterations: 2000,
            target_grad_norm: None,
            target_loss: None,
        }
    }
}

impl TrainingSection {
    fn stop_rule(&self) -> Result<Option<StopRule<f64>>> {
        match (self.target_grad_norm, self.target_loss) {
            (Some(_), Some(_)) => Err(Error::Invalid(
                "set at most one of target_grad_norm and target_loss".into(),
            )),
            (Some(eps), None) => Ok(Some(StopRule::AverageGradientNorm(eps))),
            (None, Some(loss)) => Ok(Some(StopRule::Loss(loss))),
            (None, None) => Ok(None),
        }
    }
}

/// Everything one pipeline run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Path of the scenario JSON.
    pub scenario: PathBuf,
    /// Capacity-view model applied to the derived category table.
    #[serde(default = "default_tomography")]
    pub tomography: TomographyMode,
    /// Algorithms to run, each exactly once.
    pub algorithms: Vec<AlgorithmKind>,
    /// Also plan relayed multicast schedules and train against their
    /// (never worse) completion time.
    #[serde(default)]
    pub overlay_routing: bool,
    #[serde(default)]
    pub weights: WeightScheme,
    #[serde(default)]
    pub training: TrainingSection,
    /// Bits exchanged per activated directed link per iteration. Defaults
    /// to 32 bits per model coordinate.
    #[serde(default)]
    pub kappa_bits: Option<f64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_tomography() -> TomographyMode {
    TomographyMode::Exact
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    /// Reads a config from a JSON file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let config: PipelineConfig = serde_json::from_str(&text)?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            return Err(Error::Invalid("no algorithms requested".into()));
        }
        for (k, a) in self.algorithms.iter().enumerate() {
            if self.algorithms[..k].contains(a) {
                return Err(Error::Invalid(format!(
                    "algorithm '{}' requested twice",
                    a.name()
                )));
            }
        }
        self.training.stop_rule()?;
        if let Some(kappa) = self.kappa_bits {
            if !(kappa > 0.0) {
                return Err(Error::Invalid(format!(
                    "kappa_bits must be positive, got {kappa}"
                )));
            }
        }
        Ok(())
    }
}

/// One algorithm's results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmReport {
    /// Number of activated undirected links.
    pub links: usize,
    /// The activated links themselves, canonical order.
    pub active_links: Vec<(usize, usize)>,
    /// Budget the bi-level search settled on, when one ran.
    pub budget_beta: Option<f64>,
    /// Certified spectral deviation of the optimized mixing matrix.
    pub rho: f64,
    /// Completion time of the direct-path plan (the designed bound).
    pub tau_direct_s: f64,
    /// Completion time of the relayed plan, when routing was requested.
    pub tau_routed_s: Option<f64>,
    /// Fair-share simulation of the plan used for training, on the true
    /// capacities.
    pub simulated_tau_s: f64,
    /// Predicted iterations to the surrogate target; absent when the
    /// design cannot mix.
    pub iterations_estimate: Option<f64>,
    /// Iteration at which training met its stop rule.
    pub reached_target_iteration: Option<usize>,
    /// Simulated seconds to the stop rule.
    pub time_to_target_s: Option<f64>,
    pub final_loss: Option<f64>,
    pub diverged: bool,
    /// Trace file name, relative to the report's directory.
    pub trace: String,
}

/// A requested algorithm either produced a report or a failure reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmEntry {
    pub algorithm: AlgorithmKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<AlgorithmReport>,
}

/// Everything one pipeline run produced. Serialized as `report.json`;
/// byte-identical across runs of the same config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub agents: usize,
    pub seed: u64,
    pub overlay_routing: bool,
    pub kappa_bits: f64,
    pub entries: Vec<AlgorithmEntry>,
}

impl RunReport {
    /// True when every requested algorithm completed.
    pub fn all_completed(&self) -> bool {
        self.entries.iter().all(|e| e.error.is_none())
    }

    /// Reads a report back from its JSON file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let report: RunReport = serde_json::from_str(&text)?;
        Ok(report)
    }
}

/// Immutable context shared by all algorithms of one run.
struct RunContext {
    scenario: Scenario<f64>,
    routing: RoutingTable<f64>,
    truth: CategoryTable<f64>,
    view: InferredView<f64>,
    net: OverlayNet<f64>,
    candidates: ActivationSet,
    incidence: IncidenceMatrix<f64>,
    w0: InitialWeights<f64>,
    problem: LearningProblem<f64>,
    params: ConvergenceParams<f64>,
    kappa: f64,
    stop: Option<StopRule<f64>>,
    zero_delay: bool,
    schedule_seed: u64,
    training_seed: u64,
}

/// Runs the full pipeline and writes `report.json` plus one trace CSV per
/// algorithm into the output directory. A failing algorithm is recorded in
/// its entry without aborting the others; the per-run files are still
/// written. Deterministic — including file bytes — for a fixed config.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunReport> {
    config.validate()?;
    let scenario = load_scenario::<f64>(&config.scenario)?;
    run_pipeline_with(config, scenario)
}

/// [`run_pipeline`] on an already-loaded scenario.
pub fn run_pipeline_with(config: &PipelineConfig, scenario: Scenario<f64>) -> Result<RunReport> {
    config.validate()?;

    // All randomness stems from one master generator; sub-seeds are drawn
    // in a fixed order so every stage is reproducible on its own.
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let tomography_seed = master.gen::<u64>();
    let problem_seed = master.gen::<u64>();
    let schedule_seed = master.gen::<u64>();
    let training_seed = master.gen::<u64>();

    let routing = shortest_path_routing(&scenario.underlay, &scenario.overlay)?;
    let truth = derive_categories(&scenario.underlay, &scenario.overlay, &routing);
    let view = perturb_view(&truth, config.tomography, tomography_seed)?;
    let net = OverlayNet::from_routing(&scenario.overlay, &routing)?;

    let m = scenario.overlay.num_agents();
    let problem = synthetic_problem::<f64>(
        config.training.problem.into(),
        m,
        config.training.dim,
        config.training.samples,
        config.training.heterogeneity,
        problem_seed,
    )?;
    let kappa = config
        .kappa_bits
        .unwrap_or(problem.dimension() as f64 * 32.0);
    let stop = config.training.stop_rule()?;

    // Surrogate constants: unit scale, with the target and the gradient
    // spread taken from the actual problem so the iteration/communication
    // trade-off is grounded.
    let mut params = ConvergenceParams::unit(m);
    if let Some(StopRule::AverageGradientNorm(eps)) = stop {
        params.target = eps;
    }
    params.heterogeneity = problem
        .gradient_diversity(ndarray::Array1::<f64>::zeros(problem.dimension()).view());

    let zero_delay = scenario
        .underlay
        .links()
        .iter()
        .all(|l| l.delay == 0.0);

    let ctx = RunContext {
        candidates: ActivationSet::from_overlay(&scenario.overlay),
        incidence: IncidenceMatrix::from_overlay(&scenario.overlay),
        w0: InitialWeights::uniform(m),
        routing,
        truth,
        view,
        net,
        problem,
        params,
        kappa,
        stop,
        zero_delay,
        schedule_seed,
        training_seed,
        scenario,
    };

    fs::create_dir_all(&config.out_dir)?;
    // Algorithms are independent given the shared context, so each runs on
    // its own thread; failures stay per-algorithm, and assembly below is
    // serialized in request order so reports come out identical either way.
    let outcomes: Vec<Result<(AlgorithmReport, TrainTrace<f64>)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = config
            .algorithms
            .iter()
            .map(|&algorithm| {
                let ctx = &ctx;
                scope.spawn(move || run_algorithm(config, ctx, algorithm))
            })
            .collect();
        handles
            .into_iter()
            .map(|handle| {
                handle
                    .join()
                    .unwrap_or_else(|_| Err(Error::Invalid("algorithm worker panicked".into())))
            })
            .collect()
    });
    let mut entries = Vec::with_capacity(config.algorithms.len());
    for (&algorithm, outcome) in config.algorithms.iter().zip(outcomes) {
        let entry = match outcome {
            Ok((report, trace)) => {
                write_trace(&config.out_dir.join(&report.trace), &trace)?;
                AlgorithmEntry { algorithm, error: None, report: Some(report) }
            }
            Err(err) => AlgorithmEntry {
                algorithm,
                error: Some(err.to_string()),
                report: None,
            },
        };
        entries.push(entry);
    }

    let report = RunReport {
        scenario: ctx.scenario.name.clone(),
        agents: m,
        seed: config.seed,
        overlay_routing: config.overlay_routing,
        kappa_bits: kappa,
        entries,
    };
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    fs::write(config.out_dir.join("report.json"), json)?;
    Ok(report)
}

fn run_algorithm(
    config: &PipelineConfig,
    ctx: &RunContext,
    algorithm: AlgorithmKind,
) -> Result<(AlgorithmReport, TrainTrace<f64>)> {
    // Stage 1: pick the activation set.
    let (active, budget_beta) = design_activation(ctx, algorithm)?;
    if active.is_empty() {
        return Err(Error::Infeasible(
            "the activation set is empty; nothing to schedule".into(),
        ));
    }

    // Stage 2: weights on the chosen links.
    let (weights, rho) = match config.weights {
        WeightScheme::Optimal => {
            let solution = optimize_weights(&ctx.incidence, &active, WEIGHT_TOL)?;
            (solution.weights, solution.rho)
        }
        WeightScheme::Metropolis => {
            let weights = metropolis_hastings_weights(&ctx.incidence, &active)?;
            let rho = spectral_rho(&build_mixing(&ctx.incidence, &weights)?);
            (weights, rho)
        }
    };
    let mixing = build_mixing(&ctx.incidence, &weights)?;

    // Stage 3: price the communication plan.
    let direct = direct_path_schedule(&active, &ctx.net, &ctx.view, ctx.kappa)?;
    let routed = if config.overlay_routing {
        let demands = demands_from_activation(&active, ctx.kappa)?;
        let options = ScheduleOptions { seed: ctx.schedule_seed, ..Default::default() };
        Some(min_time_schedule(&demands, &ctx.net, &ctx.view, &options)?)
    } else {
        None
    };
    let (plan, tau) = match &routed {
        Some(schedule) => (schedule, schedule.tau),
        None => (&direct, direct.tau),
    };
    if !(tau > 0.0) {
        return Err(Error::Infeasible(format!(
            "the schedule has non-positive duration {tau}; wall clock would not advance"
        )));
    }

    // The designed bound must survive execution on the real capacities
    // whenever the view was conservative. Fair-share simulation models
    // unpaced flows, whose completions only match the planned rates when
    // propagation delays vanish, so the check is armed exactly then.
    let simulated_tau = simulate_completion(plan, &ctx.truth);
    if ctx.zero_delay
        && ctx.view.is_safe_for(&ctx.truth)
        && simulated_tau > direct.tau * (1.0 + SAFETY_SLACK)
    {
        return Err(Error::Infeasible(format!(
            "simulated completion {simulated_tau} exceeds the designed bound {}",
            direct.tau
        )));
    }

    // Stage 4: train against the simulated clock.
    let train_config = TrainConfig {
        learning_rate: config.training.learning_rate,
        batch: config.training.batch,
        max_iterations: config.training.max_iterations,
        seed: ctx.training_seed,
        target: ctx.stop,
    };
    let design = CommunicationDesign { mixing, tau };
    let trace = train(&ctx.problem, &design, &train_config)?;

    let iterations_estimate = iterations_to_converge(rho, &ctx.params)
        .ok()
        .filter(|k| k.is_finite());
    let report = AlgorithmReport {
        links: active.len(),
        active_links: active.links().iter().copied().collect(),
        budget_beta,
        rho,
        tau_direct_s: direct.tau,
        tau_routed_s: routed.as_ref().map(|s| s.tau),
        simulated_tau_s: simulated_tau,
        iterations_estimate,
        reached_target_iteration: trace.reached_target,
        time_to_target_s: trace.time_to_target(),
        final_loss: trace.final_loss(),
        diverged: trace.diverged,
        trace: format!("trace_{}.csv", algorithm.name()),
    };
    Ok((report, trace))
}

/// Runs the requested design algorithm: baselines directly, search
/// algorithms inside the bi-level budget scan.
fn design_activation(
    ctx: &RunContext,
    algorithm: AlgorithmKind,
) -> Result<(ActivationSet, Option<f64>)> {
    if let Some(kind) = algorithm.is_baseline() {
        let set = baseline_topology(kind, &ctx.scenario.overlay, &ctx.routing)?;
        return Ok((set, None));
    }
    let budget = SearchBudget::default();
    let solver: Box<dyn Fn(f64) -> Result<ActivationSet> + '_> = match algorithm {
        AlgorithmKind::Sca => Box::new(|beta| {
            sca_activation(
                &ctx.candidates,
                &ctx.w0,
                beta,
                &ctx.net,
                &ctx.view,
                ctx.kappa,
                SCA_EPSILON,
                &budget,
            )
        }),
        AlgorithmKind::Exact => Box::new(|beta| {
            exact_activation(&ctx.candidates, &ctx.w0, beta, &ctx.net, &ctx.view, ctx.kappa)
        }),
        AlgorithmKind::RelaxRho => Box::new(|beta| {
            relaxation_rho(&ctx.candidates, &ctx.w0, beta, &ctx.net, &ctx.view, ctx.kappa, &budget)
        }),
        AlgorithmKind::RelaxLambda => Box::new(|beta| {
            relaxation_lambda(
                &ctx.candidates,
                &ctx.w0,
                beta,
                &ctx.net,
                &ctx.view,
                ctx.kappa,
                &budget,
            )
        }),
        AlgorithmKind::Greedy => Box::new(|beta| {
            greedy_fiedler(&ctx.candidates, &ctx.w0, beta, &ctx.net, &ctx.view, ctx.kappa)
        }),
        AlgorithmKind::Clique | AlgorithmKind::Ring | AlgorithmKind::Prim => unreachable!(),
    };
    let result = bilevel_search(
        &ctx.candidates,
        &ctx.w0,
        &ctx.net,
        &ctx.view,
        ctx.kappa,
        &ctx.params,
        solver,
        &BilevelOptions::default(),
    )?;
    Ok((result.best.set, Some(result.best.beta)))
}

/// Writes a training trace as CSV. Accuracy is left empty for problems
/// without one.
fn write_trace(path: &Path, trace: &TrainTrace<f64>) -> Result<()> {
    let mut out = String::from("iteration,wall_clock_s,loss,accuracy,grad_norm_sq_avg\n");
    for row in &trace.rows {
        let accuracy = row.accuracy.map(|a| a.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.iteration, row.wall_clock, row.loss, accuracy, row.grad_norm_sq_avg
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Escapes one CSV field: quoted when it contains a delimiter or quote.
fn csv_field(text: &str) -> String {
    if text.contains([',', '"', '\n']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

fn opt_cell<T: ToString>(value: &Option<T>) -> String {
    value.as_ref().map(|v| v.to_string()).unwrap_or_default()
}

/// Merges reports over one scenario into a CSV table ranking algorithms by
/// simulated time-to-target. Completed runs come first, fastest first;
/// entries that never met the target follow, then recorded failures.
pub fn compare_report(reports: &[RunReport]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::Invalid("no reports to compare".into()));
    }
    let first = &reports[0];
    for report in &reports[1..] {
        if report.scenario != first.scenario || report.agents != first.agents {
            return Err(Error::Invalid(format!(
                "reports mix scenarios: '{}' ({} agents) vs '{}' ({} agents)",
                first.scenario, first.agents, report.scenario, report.agents
            )));
        }
    }

    struct Row<'a> {
        report: &'a RunReport,
        entry: &'a AlgorithmEntry,
    }
    let mut rows: Vec<Row<'_>> = reports
        .iter()
        .flat_map(|report| report.entries.iter().map(move |entry| Row { report, entry }))
        .collect();
    let sort_key = |row: &Row<'_>| -> (u8, f64, &'static str, bool) {
        match &row.entry.report {
            Some(rep) => match rep.time_to_target_s {
                Some(t) => (0, t, row.entry.algorithm.name(), row.report.overlay_routing),
                None => (1, f64::INFINITY, row.entry.algorithm.name(), row.report.overlay_routing),
            },
            None => (2, f64::INFINITY, row.entry.algorithm.name(), row.report.overlay_routing),
        }
    };
    rows.sort_by(|a, b| {
        let (ka, kb) = (sort_key(a), sort_key(b));
        ka.0.cmp(&kb.0)
            .then(ka.1.partial_cmp(&kb.1).expect("sort keys are never NaN"))
            .then(ka.2.cmp(kb.2))
            .then(ka.3.cmp(&kb.3))
    });

    let mut out = String::from(
        "rank,algorithm,overlay_routing,time_to_target_s,reached_iteration,\
         tau_direct_s,tau_routed_s,simulated_tau_s,rho,links,iterations_estimate,status\n",
    );
    for (index, row) in rows.iter().enumerate() {
        let rank = (index + 1).to_string();
        match &row.entry.report {
            Some(rep) => out.push_str(&format!(
                "{rank},{},{},{},{},{},{},{},{},{},{},ok\n",
                row.entry.algorithm.name(),
                row.report.overlay_routing,
                opt_cell(&rep.time_to_target_s),
                opt_cell(&rep.reached_target_iteration),
                rep.tau_direct_s,
                opt_cell(&rep.tau_routed_s),
                rep.simulated_tau_s,
                rep.rho,
                rep.links,
                opt_cell(&rep.iterations_estimate),
            )),
            None => out.push_str(&format!(
                "{rank},{},{},,,,,,,,,{}\n",
                row.entry.algorithm.name(),
                row.report.overlay_routing,
                csv_field(row.entry.error.as_deref().unwrap_or("failed")),
            )),
        }
    }
    Ok(out)
}
