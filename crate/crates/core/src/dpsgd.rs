//! Decentralized parallel SGD at desk scale.
//!
//! Turns a communication design — a mixing matrix and a per-iteration
//! communication time — into convergence traces over simulated wall clock.
//! Each iteration every agent averages its neighbors' parameters through
//! the mixing matrix and takes a local stochastic gradient step; gradients
//! are evaluated at the pre-mixing parameters, so the exchange and the
//! gradient computation could run in parallel.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mixing::MixingMatrix;
use crate::scalar::Scalar;

/// Loss beyond which a run is declared divergent and truncated.
const DIVERGENCE_LOSS: f64 = 1e12;

/// Families of synthetic problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    /// Multinomial logistic regression on Gaussian class clusters.
    LogisticClusters,
    /// Per-agent diagonal quadratics with controllable minimizer spread.
    Quadratic,
}

enum ProblemData<F> {
    Logistic {
        /// Per-agent feature matrices, `n_i x inputs`.
        features: Vec<Array2<F>>,
        /// Per-agent labels in `0..classes`.
        labels: Vec<Vec<usize>>,
        classes: usize,
        inputs: usize,
    },
    Quadratic {
        /// Per-agent diagonal curvatures, entrywise positive.
        curvature: Vec<Array1<F>>,
        /// Per-agent minimizers.
        minimizer: Vec<Array1<F>>,
    },
}

/// A distributed learning task: one private dataset per agent and a smooth
/// loss, with the global objective being the mean of the per-agent means.
pub struct LearningProblem<F> {
    data: ProblemData<F>,
    agents: usize,
    dim: usize,
}

/// A sample from the standard normal, by the Box-Muller transform.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = loop {
        let u: f64 = rng.gen();
        if u > f64::MIN_POSITIVE {
            break u;
        }
    };
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Builds a synthetic [`LearningProblem`], bit-reproducible per seed.
///
/// `LogisticClusters` draws `samples` points from ten Gaussian clusters
/// (unit noise around class means of length 2.5), labels them round-robin,
/// and divides them evenly among the agents after a seeded shuffle;
/// `heterogeneity` in `[0, 1]` is the fraction of the data dealt out sorted
/// by label instead of shuffled, so zero gives IID shards and one maximally
/// skewed ones. The model is the flattened class-weight matrix, so the
/// actual dimension is rounded to `classes * max(1, dim / classes)`.
///
/// `Quadratic` gives agent `i` the loss `0.5 (x - x_i)' A_i (x - x_i)` with
/// diagonal `A_i` drawn uniformly from `[0.5, 1.5]` and
/// `x_i = center + heterogeneity * noise`, so `heterogeneity = 0` makes all
/// agents share one minimizer. It has no sample set (`samples` is ignored)
/// and its gradients are exact.
pub fn synthetic_problem<F: Scalar>(
    kind: ProblemKind,
    agents: usize,
    dim: usize,
    samples: usize,
    heterogeneity: f64,
    seed: u64,
) -> Result<LearningProblem<F>> {
    if agents == 0 || dim == 0 {
        return Err(Error::Invalid(format!(
            "need at least one agent and one dimension, got {agents} and {dim}"
        )));
    }
    if !(0.0..=1.0).contains(&heterogeneity) {
        return Err(Error::Invalid(format!(
            "heterogeneity must lie in [0, 1], got {heterogeneity}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        ProblemKind::LogisticClusters => {
            if samples < agents {
                return Err(Error::Invalid(format!(
                    "{samples} samples cannot cover {agents} agents"
                )));
            }
            let classes = 10usize;
            let inputs = (dim / classes).max(1);

            // Class means: radius 2.5 in a random direction each.
            let mut means = Vec::with_capacity(classes);
            for _ in 0..classes {
                let mut v: Vec<f64> = (0..inputs).map(|_| standard_normal(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                for x in v.iter_mut() {
                    *x *= 2.5 / norm;
                }
                means.push(v);
            }

            let mut points = Vec::with_capacity(samples);
            for s in 0..samples {
                let label = s % classes;
                let feature: Vec<f64> = means[label]
                    .iter()
                    .map(|&mu| mu + standard_normal(&mut rng))
                    .collect();
                points.push((feature, label));
            }

            // Shuffle, then deal the first `heterogeneity` fraction sorted
            // by label: the knob between IID and label-skewed shards.
            let mut order: Vec<usize> = (0..samples).collect();
            for k in (1..samples).rev() {
                order.swap(k, rng.gen_range(0..=k));
            }
            let skewed = ((heterogeneity * samples as f64).floor() as usize).min(samples);
            let mut head: Vec<usize> = order[..skewed].to_vec();
            head.sort_by_key(|&s| (points[s].1, s));
            let order: Vec<usize> = head.into_iter().chain(order[skewed..].iter().copied()).collect();

            let mut features = Vec::with_capacity(agents);
            let mut labels = Vec::with_capacity(agents);
            let base = samples / agents;
            let extra = samples % agents;
            let mut cursor = 0usize;
            for i in 0..agents {
                let take = base + usize::from(i < extra);
                let mut mat = Array2::<F>::zeros((take, inputs));
                let mut labs = Vec::with_capacity(take);
                for (row, &s) in order[cursor..cursor + take].iter().enumerate() {
                    for (col, &x) in points[s].0.iter().enumerate() {
                        mat[(row, col)] = F::of(x);
                    }
                    labs.push(points[s].1);
                }
                cursor += take;
                features.push(mat);
                labels.push(labs);
            }
            Ok(LearningProblem {
                data: ProblemData::Logistic { features, labels, classes, inputs },
                agents,
                dim: classes * inputs,
            })
        }
        ProblemKind::Quadratic => {
            let center: Vec<f64> = (0..dim).map(|_| standard_normal(&mut rng)).collect();
            let mut curvature = Vec::with_capacity(agents);
            let mut minimizer = Vec::with_capacity(agents);
            for _ in 0..agents {
                let a: Array1<F> =
                    Array1::from_iter((0..dim).map(|_| F::of(0.5 + rng.gen::<f64>())));
                let x: Array1<F> = Array1::from_iter(
                    center
                        .iter()
                        .map(|&c| F::of(c + heterogeneity * standard_normal(&mut rng))),
                );
                curvature.push(a);
                minimizer.push(x);
            }
            Ok(LearningProblem {
                data: ProblemData::Quadratic { curvature, minimizer },
                agents,
                dim,
            })
        }
    }
}

impl<F: Scalar> LearningProblem<F> {
    pub fn agents(&self) -> usize {
        self.agents
    }

    /// Model dimension.
    pub fn dimension(&self) -> usize {
        self.dim
    }

    /// Loss of agent `i` at `x`: the mean loss over its dataset.
    pub fn local_loss(&self, i: usize, x: ArrayView1<'_, F>) -> F {
        match &self.data {
            ProblemData::Logistic { features, labels, classes, inputs } => {
                let n = labels[i].len();
                let mut total = F::zero();
                for (row, &label) in features[i].rows().into_iter().zip(&labels[i]) {
                    let logits = class_logits(x, row, *classes, *inputs);
                    total += log_sum_exp(&logits) - logits[label];
                }
                total / F::of(n as f64)
            }
            ProblemData::Quadratic { curvature, minimizer } => {
                let mut total = F::zero();
                for k in 0..self.dim {
                    let d = x[k] - minimizer[i][k];
                    total += F::of(0.5) * curvature[i][k] * d * d;
                }
                total
            }
        }
    }

    /// Full-batch gradient of agent `i`'s loss at `x`.
    pub fn local_grad(&self, i: usize, x: ArrayView1<'_, F>) -> Array1<F> {
        match &self.data {
            ProblemData::Logistic { features, labels, classes, inputs } => {
                let n = labels[i].len();
                let mut grad = Array1::<F>::zeros(self.dim);
                for (row, &label) in features[i].rows().into_iter().zip(&labels[i]) {
                    accumulate_logistic_grad(&mut grad, x, row, label, *classes, *inputs);
                }
                grad / F::of(n as f64)
            }
            ProblemData::Quadratic { curvature, minimizer } => {
                let mut grad = Array1::<F>::zeros(self.dim);
                for k in 0..self.dim {
                    grad[k] = curvature[i][k] * (x[k] - minimizer[i][k]);
                }
                grad
            }
        }
    }

    /// Mini-batch stochastic gradient of agent `i`'s loss at `x`: `batch`
    /// samples drawn uniformly with replacement from its dataset. The
    /// quadratic family is sample-free, so its gradient is exact and draws
    /// no randomness.
    pub fn stochastic_grad(
        &self,
        i: usize,
        x: ArrayView1<'_, F>,
        batch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Array1<F> {
        match &self.data {
            ProblemData::Logistic { features, labels, classes, inputs } => {
                let n = labels[i].len();
                let mut grad = Array1::<F>::zeros(self.dim);
                for _ in 0..batch {
                    let s = rng.gen_range(0..n);
                    accumulate_logistic_grad(
                        &mut grad,
                        x,
                        features[i].row(s),
                        labels[i][s],
                        *classes,
                        *inputs,
                    );
                }
                grad / F::of(batch as f64)
            }
            ProblemData::Quadratic { .. } => self.local_grad(i, x),
        }
    }

    /// Global objective: the mean of the per-agent losses.
    pub fn global_loss(&self, x: ArrayView1<'_, F>) -> F {
        let mut total = F::zero();
        for i in 0..self.agents {
            total += self.local_loss(i, x);
        }
        total / F::of(self.agents as f64)
    }

    /// Gradient of the global objective.
    pub fn global_grad(&self, x: ArrayView1<'_, F>) -> Array1<F> {
        let mut grad = Array1::<F>::zeros(self.dim);
        for i in 0..self.agents {
            grad += &self.local_grad(i, x);
        }
        grad / F::of(self.agents as f64)
    }

    /// Classification accuracy at `x` over the pooled dataset, when the
    /// problem has one.
    pub fn accuracy(&self, x: ArrayView1<'_, F>) -> Option<F> {
        match &self.data {
            ProblemData::Logistic { features, labels, classes, inputs } => {
                let mut hits = 0usize;
                let mut total = 0usize;
                for (mat, labs) in features.iter().zip(labels) {
                    for (row, &label) in mat.rows().into_iter().zip(labs) {
                        let logits = class_logits(x, row, *classes, *inputs);
                        let best = logits
                            .iter()
                            .enumerate()
                            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
                            .map(|(c, _)| c)
                            .expect("at least one class");
                        hits += usize::from(best == label);
                        total += 1;
                    }
                }
                Some(F::of(hits as f64) / F::of(total as f64))
            }
            ProblemData::Quadratic { .. } => None,
        }
    }

    /// The exact global minimizer, for families with one in closed form.
    pub fn global_minimizer(&self) -> Option<Array1<F>> {
        match &self.data {
            ProblemData::Quadratic { curvature, minimizer } => {
                let mut num = Array1::<F>::zeros(self.dim);
                let mut den = Array1::<F>::zeros(self.dim);
                for (a, x) in curvature.iter().zip(minimizer) {
                    for k in 0..self.dim {
                        num[k] += a[k] * x[k];
                        den[k] += a[k];
                    }
                }
                Some(num / &den)
            }
            ProblemData::Logistic { .. } => None,
        }
    }

    /// Root-mean-square spread of the local gradients around the global
    /// one at `x` — an empirical stand-in for the gradient-diversity
    /// constant of the iteration estimate.
    pub fn gradient_diversity(&self, x: ArrayView1<'_, F>) -> F {
        let global = self.global_grad(x);
        let mut total = F::zero();
        for i in 0..self.agents {
            let diff = self.local_grad(i, x) - &global;
            total += diff.iter().map(|&d| d * d).sum::<F>();
        }
        (total / F::of(self.agents as f64)).sqrt()
    }
}

fn class_logits<F: Scalar>(
    x: ArrayView1<'_, F>,
    feature: ArrayView1<'_, F>,
    classes: usize,
    inputs: usize,
) -> Vec<F> {
    (0..classes)
        .map(|c| {
            let mut z = F::zero();
            for k in 0..inputs {
                z += x[c * inputs + k] * feature[k];
            }
            z
        })
        .collect()
}

fn log_sum_exp<F: Scalar>(logits: &[F]) -> F {
    let hi = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let sum: F = logits.iter().map(|&z| (z - hi).exp()).sum();
    hi + sum.ln()
}

/// Adds one sample's cross-entropy gradient (softmax probabilities minus
/// the one-hot label, outer the feature) onto `grad`.
fn accumulate_logistic_grad<F: Scalar>(
    grad: &mut Array1<F>,
    x: ArrayView1<'_, F>,
    feature: ArrayView1<'_, F>,
    label: usize,
    classes: usize,
    inputs: usize,
) {
    let logits = class_logits(x, feature, classes, inputs);
    let lse = log_sum_exp(&logits);
    for (c, &z) in logits.iter().enumerate() {
        let mut coeff = (z - lse).exp();
        if c == label {
            coeff -= F::one();
        }
        for k in 0..inputs {
            grad[c * inputs + k] += coeff * feature[k];
        }
    }
}

/// One D-PSGD iteration: mix, then step. Row `i` of the result is
/// `sum_j W_ij x_j - eta * g_i`, with the gradients `g_i` supplied by the
/// caller at the pre-mixing parameters.
pub fn dpsgd_step<F: Scalar>(
    x: &Array2<F>,
    w: &MixingMatrix<F>,
    gradients: &Array2<F>,
    eta: F,
) -> Array2<F> {
    w.matrix().dot(x) - &(gradients * eta)
}

/// What a trained design costs per iteration: the mixing matrix the agents
/// apply and the communication seconds each iteration takes.
pub struct CommunicationDesign<F> {
    pub mixing: MixingMatrix<F>,
    pub tau: F,
}

/// When to declare a run converged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule<F> {
    /// Running average of the squared global gradient norm at the mean
    /// parameter falls to this value.
    AverageGradientNorm(F),
    /// Global loss at the mean parameter falls to this value.
    Loss(F),
}

/// Trainer configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<F> {
    pub learning_rate: F,
    pub batch: usize,
    pub max_iterations: usize,
    pub seed: u64,
    /// Stop early when met; otherwise run to `max_iterations`.
    pub target: Option<StopRule<F>>,
}

impl<F: Scalar> TrainConfig<F> {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > F::zero()) {
            return Err(Error::Invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch == 0 || self.max_iterations == 0 {
            return Err(Error::Invalid(
                "batch size and iteration budget must be at least one".into(),
            ));
        }
        Ok(())
    }
}

/// One recorded iteration. Metrics are evaluated at the agents' mean
/// parameter after the step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow<F> {
    /// 1-based iteration count.
    pub iteration: usize,
    /// Simulated seconds: iteration times the design's per-iteration time.
    pub wall_clock: F,
    pub loss: F,
    pub accuracy: Option<F>,
    /// Running average of the squared global gradient norm — the
    /// convergence metric.
    pub grad_norm_sq_avg: F,
}

/// A full training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace<F> {
    pub rows: Vec<TraceRow<F>>,
    /// Iteration at which the stop rule was met, if it was.
    pub reached_target: Option<usize>,
    /// The loss exploded and the trace was truncated.
    pub diverged: bool,
}

impl<F: Scalar> TrainTrace<F> {
    /// Simulated seconds to the stop rule, when it was reached.
    pub fn time_to_target(&self) -> Option<F> {
        self.reached_target.map(|k| {
            self.rows
                .iter()
                .find(|r| r.iteration == k)
                .expect("the target row is recorded")
                .wall_clock
        })
    }

    pub fn final_loss(&self) -> Option<F> {
        self.rows.last().map(|r| r.loss)
    }
}

/// Runs D-PSGD from all-zero parameters under the given design, recording
/// one trace row per iteration until the stop rule, divergence, or the
/// iteration budget. Bit-deterministic for a fixed config and seed.
pub fn train<F: Scalar>(
    problem: &LearningProblem<F>,
    design: &CommunicationDesign<F>,
    config: &TrainConfig<F>,
) -> Result<TrainTrace<F>> {
    config.validate()?;
    let m = problem.agents();
    let d = problem.dimension();
    if design.mixing.order() != m {
        return Err(Error::Dimension(format!(
            "mixing matrix is over {} agents but the problem has {m}",
            design.mixing.order()
        )));
    }
    if !(design.tau > F::zero()) {
        return Err(Error::Invalid(format!(
            "per-iteration time must be positive, got {}",
            design.tau
        )));
    }
    if design.mixing.row_sum_error() > F::of(1e-8) {
        return Err(Error::Invalid(
            "mixing matrix rows must sum to one".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut x = Array2::<F>::zeros((m, d));
    let mut rows = Vec::new();
    let mut grad_norm_sq_sum = F::zero();
    let mut reached_target = None;
    let mut diverged = false;

    for k in 1..=config.max_iterations {
        let mut gradients = Array2::<F>::zeros((m, d));
        for i in 0..m {
            let g = problem.stochastic_grad(i, x.row(i), config.batch, &mut rng);
            gradients.row_mut(i).assign(&g);
        }
        x = dpsgd_step(&x, &design.mixing, &gradients, config.learning_rate);

        let mean = x.mean_axis(Axis(0)).expect("at least one agent");
        let loss = problem.global_loss(mean.view());
        let grad = problem.global_grad(mean.view());
        grad_norm_sq_sum += grad.iter().map(|&g| g * g).sum::<F>();
        let grad_norm_sq_avg = grad_norm_sq_sum / F::of(k as f64);
        rows.push(TraceRow {
            iteration: k,
            wall_clock: design.tau * F::of(k as f64),
            loss,
            accuracy: problem.accuracy(mean.view()),
            grad_norm_sq_avg,
        });

        if !(loss < F::of(DIVERGENCE_LOSS)) {
            diverged = true;
            break;
        }
        let met = match config.target {
            Some(StopRule::AverageGradientNorm(eps)) => grad_norm_sq_avg <= eps,
            Some(StopRule::Loss(target)) => loss <= target,
            None => false,
        };
        if met {
            reached_target = Some(k);
            break;
        }
    }
    Ok(TrainTrace { rows, reached_target, diverged })
}
