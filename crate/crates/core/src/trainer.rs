//! The training loop: uniform warmup with free score computation, switching
//! to presample-score-resample importance sampling once the smoothed tau
//! estimate crosses its threshold.
//!
//! Per iteration:
//!
//! - warmup branch: draw `b` uniform samples, weights 1, SGD step; scores for
//!   the tau update come from the same forward pass (pre-update parameters),
//!   so they cost nothing extra for the forward-only score kinds.
//! - importance branch: draw a presample of `B` uniformly, score it, normalize
//!   into `g`, resample `b` with replacement, weigh by `1/(B g)`, SGD step
//!   with the weighted batch estimator `(1/b) sum_j w_j grad_j`.
//!
//! Weights are folded into the per-sample output-gradient rows before the
//! single batched backward pass, which is algebraically identical to weighting
//! parameter gradients. `forward_count`/`backward_count` count per-sample
//! passes of the training loop itself (B + b and b per importance iteration
//! for forward-only score kinds, b and b per warmup iteration); evaluation
//! passes are instrumentation and are not counted.

use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::losses::{self, LossKind, Targets};
use crate::nn::{self, GradientSet, Network};
use crate::sampling;
use crate::scalar::Scalar;
use crate::scoring::{self, ScoreKind};
use crate::variance::{TauEstimator, TauMode};

/// Hyperparameters for one training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Presample size B for importance iterations.
    pub presample_size: usize,
    /// Batch size b.
    pub batch_size: usize,
    /// Threshold on the smoothed tau; `>= 1`, may be infinite.
    pub tau_threshold: f64,
    /// EMA coefficient `a_tau` in `[0, 1)`.
    pub tau_ema: f64,
    pub tau_mode: TauMode,
    pub learning_rate: f64,
    /// Momentum coefficient in `[0, 1)`.
    pub momentum: f64,
    pub weight_decay: f64,
    /// `(iteration, multiplier)` pairs; the multiplier applies from that
    /// iteration on.
    pub lr_schedule: Vec<(u64, f64)>,
    pub max_iterations: u64,
    /// Seed of the run's single sampling RNG stream.
    pub seed: u64,
    pub score_kind: ScoreKind,
    pub loss: LossKind,
    /// Evaluate on the held-out set every this many iterations.
    pub eval_every: Option<u64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::argument("batch_size must be at least 1"));
        }
        if self.batch_size > self.presample_size {
            return Err(Error::argument(format!(
                "batch_size {} exceeds presample_size {}",
                self.batch_size, self.presample_size
            )));
        }
        if !(self.tau_threshold >= 1.0) {
            return Err(Error::argument("tau_threshold must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.tau_ema) {
            return Err(Error::argument("tau_ema must lie in [0, 1)"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::argument("learning_rate must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::argument("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::argument("weight_decay must be non-negative"));
        }
        if self.max_iterations == 0 {
            return Err(Error::argument("max_iterations must be at least 1"));
        }
        Ok(())
    }

    fn lr_at(&self, iteration: u64) -> f64 {
        let mut mult = 1.0;
        for &(at, m) in &self.lr_schedule {
            if iteration >= at {
                mult = m;
            }
        }
        self.learning_rate * mult
    }
}

/// Which sampling branch produced an iteration's update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    Uniform,
    Importance,
}

/// One training-loop observation, emitted per iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub wall_clock_seconds: f64,
    pub mode: SamplingMode,
    /// Weighted batch-mean training loss `(1/b) sum_j w_j loss_j`.
    pub train_loss: f64,
    pub tau: f64,
    /// Cumulative per-sample forward passes of the training loop.
    pub forward_count: u64,
    /// Cumulative per-sample backward passes of the training loop.
    pub backward_count: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_error: Option<f64>,
}

/// Full-pass evaluation metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_loss: f64,
    /// Classification error rate; `None` for regression targets.
    pub error_rate: Option<f64>,
}

/// Final state of a finished run.
#[derive(Debug, Clone)]
pub struct TrainOutcome<F: Scalar> {
    pub network: Network<F>,
    pub records: Vec<MetricsRecord>,
    /// Full-pass metrics on the training set after the last iteration.
    pub final_train: EvalReport,
    /// Full-pass metrics on the eval set, when one was given.
    pub final_eval: Option<EvalReport>,
}

/// One SGD-with-momentum update:
/// `v <- momentum * v + grads + weight_decay * theta; theta <- theta - lr * v`.
pub fn sgd_step<F: Scalar>(
    network: &mut Network<F>,
    grads: &GradientSet<F>,
    velocity: &mut GradientSet<F>,
    learning_rate: F,
    momentum: F,
    weight_decay: F,
) {
    for (l, layer) in network.layers_mut().iter_mut().enumerate() {
        let vw = &mut velocity.weight_grads[l];
        vw.zip_mut_with(&grads.weight_grads[l], |v, &g| *v = momentum * *v + g);
        if weight_decay > F::zero() {
            vw.zip_mut_with(&layer.weights, |v, &w| *v = *v + weight_decay * w);
        }
        layer.weights.zip_mut_with(vw, |w, &v| *w = *w - learning_rate * v);

        let vb = &mut velocity.bias_grads[l];
        vb.zip_mut_with(&grads.bias_grads[l], |v, &g| *v = momentum * *v + g);
        if weight_decay > F::zero() {
            vb.zip_mut_with(&layer.bias, |v, &b| *v = *v + weight_decay * b);
        }
        layer.bias.zip_mut_with(vb, |b, &v| *b = *b - learning_rate * v);
    }
}

/// Deterministic full-pass metrics: mean loss, plus the argmax error rate for
/// classification targets (ties break to the lowest index).
pub fn evaluate<F: Scalar>(network: &Network<F>, dataset: &Dataset<F>, kind: LossKind) -> Result<EvalReport> {
    const CHUNK: usize = 512;
    let n = dataset.len();
    let mut total_loss = 0.0f64;
    let mut errors = 0usize;
    let mut classification = false;

    let mut at = 0;
    while at < n {
        let hi = (at + CHUNK).min(n);
        let indices: Vec<usize> = (at..hi).collect();
        let (inputs, targets) = dataset.select(&indices);
        let trace = nn::forward(network, &inputs)?;
        let losses_vec = losses::loss_values(kind, trace.output(), &targets)?;
        total_loss += losses_vec.iter().map(|l| l.as_f64()).sum::<f64>();

        match &targets {
            Targets::Classes(classes) => {
                classification = true;
                for (row, &truth) in trace.output().rows().into_iter().zip(classes) {
                    let mut best = 0usize;
                    let mut best_v = row[0];
                    for (j, &v) in row.iter().enumerate().skip(1) {
                        if v > best_v {
                            best_v = v;
                            best = j;
                        }
                    }
                    if best != truth {
                        errors += 1;
                    }
                }
            }
            Targets::Signs(signs) if trace.output().ncols() == 1 => {
                classification = true;
                for (row, &truth) in trace.output().rows().into_iter().zip(signs) {
                    let pred: i8 = if row[0] > F::zero() { 1 } else { -1 };
                    if pred != truth {
                        errors += 1;
                    }
                }
            }
            _ => {}
        }
        at = hi;
    }
    Ok(EvalReport {
        mean_loss: total_loss / n as f64,
        error_rate: classification.then(|| errors as f64 / n as f64),
    })
}

/// Runs the full training loop, returning every [`MetricsRecord`].
pub fn train<F: Scalar>(
    config: &TrainConfig,
    network: Network<F>,
    train_set: &Dataset<F>,
    eval_set: Option<&Dataset<F>>,
) -> Result<TrainOutcome<F>> {
    train_observed(config, network, train_set, eval_set, |_, _| {})
}

/// [`train`] with an observer called after every iteration; the hook receives
/// the fresh record and the post-update network (for streaming metrics,
/// checkpoints, or probes).
pub fn train_observed<F: Scalar>(
    config: &TrainConfig,
    mut network: Network<F>,
    train_set: &Dataset<F>,
    eval_set: Option<&Dataset<F>>,
    mut observer: impl FnMut(&MetricsRecord, &Network<F>),
) -> Result<TrainOutcome<F>> {
    config.validate()?;
    let n = train_set.len();
    if config.batch_size > n {
        return Err(Error::argument(format!(
            "batch_size {} exceeds dataset size {n}",
            config.batch_size
        )));
    }
    if config.presample_size > n {
        return Err(Error::argument(format!(
            "presample_size {} exceeds dataset size {n}",
            config.presample_size
        )));
    }
    if train_set.dim() != network.input_dim() {
        return Err(Error::shape(format!(
            "dataset width {} does not match network input width {}",
            train_set.dim(),
            network.input_dim()
        )));
    }

    let mut rng = Xoshiro256PlusPlus::seed_from_u64(config.seed);
    let mut velocity = GradientSet::zeros_like(&network);
    let mut tau = TauEstimator::new(
        F::from_f64_lossy(config.tau_ema),
        F::from_f64_lossy(config.tau_threshold),
        config.tau_mode,
    )?;
    let mut forward_count = 0u64;
    let mut backward_count = 0u64;
    let mut records = Vec::with_capacity(config.max_iterations as usize);
    let started = Instant::now();

    let momentum = F::from_f64_lossy(config.momentum);
    let weight_decay = F::from_f64_lossy(config.weight_decay);
    let inv_b = F::from_f64_lossy(1.0 / config.batch_size as f64);

    for t in 1..=config.max_iterations {
        let lr = F::from_f64_lossy(config.lr_at(t));
        let importance = tau.should_switch();

        let (mode, train_loss, g) = if importance {
            // lines 6-10: presample B, score, resample b with weights 1/(B g)
            let presample = train_set.uniform_batch(config.presample_size, &mut rng)?;
            let (pre_inputs, pre_targets) = train_set.select(&presample);
            let pre_trace = nn::forward(&network, &pre_inputs)?;
            forward_count += config.presample_size as u64;
            if config.score_kind == ScoreKind::GradientNorm {
                backward_count += config.presample_size as u64;
            }
            let scores = scoring::scores_for(config.score_kind, &network, &pre_trace, config.loss, &pre_targets)?;
            let plan = sampling::plan(&scores, config.batch_size, &mut rng)?;

            let batch_indices: Vec<usize> = plan.selected_indices.iter().map(|&j| presample[j]).collect();
            let (inputs, targets) = train_set.select(&batch_indices);
            let trace = nn::forward(&network, &inputs)?;
            forward_count += config.batch_size as u64;

            let loss_vec = losses::loss_values(config.loss, trace.output(), &targets)?;
            let mut og = losses::output_gradients(config.loss, trace.output(), &targets)?;
            scale_rows(&mut og, &plan.weights, inv_b);
            let grads = nn::backward(&network, &trace, &og)?;
            backward_count += config.batch_size as u64;

            let train_loss = weighted_mean_loss(&loss_vec, Some(&plan.weights));
            abort_if_non_finite(t, train_loss, &grads)?;
            sgd_step(&mut network, &grads, &mut velocity, lr, momentum, weight_decay);
            (SamplingMode::Importance, train_loss, plan.probabilities)
        } else {
            // lines 12-15: uniform batch, weights 1, scores from the same
            // (pre-update) forward pass
            let batch = train_set.uniform_batch(config.batch_size, &mut rng)?;
            let (inputs, targets) = train_set.select(&batch);
            let trace = nn::forward(&network, &inputs)?;
            forward_count += config.batch_size as u64;

            let scores = scoring::scores_for(config.score_kind, &network, &trace, config.loss, &targets)?;
            if config.score_kind == ScoreKind::GradientNorm {
                backward_count += config.batch_size as u64;
            }
            let g = sampling::normalize(&scores)?;

            let loss_vec = losses::loss_values(config.loss, trace.output(), &targets)?;
            let mut og = losses::output_gradients(config.loss, trace.output(), &targets)?;
            scale_rows(&mut og, &[], inv_b);
            let grads = nn::backward(&network, &trace, &og)?;
            backward_count += config.batch_size as u64;

            let train_loss = weighted_mean_loss(&loss_vec, None);
            abort_if_non_finite(t, train_loss, &grads)?;
            sgd_step(&mut network, &grads, &mut velocity, lr, momentum, weight_decay);
            (SamplingMode::Uniform, train_loss, g)
        };

        // line 17: tau EMA update from this iteration's distribution
        tau.update(&g)?;

        let (eval_loss, eval_error) = match (eval_set, config.eval_every) {
            (Some(es), Some(every)) if every > 0 && t % every == 0 => {
                let report = evaluate(&network, es, config.loss)?;
                (Some(report.mean_loss), report.error_rate)
            }
            _ => (None, None),
        };

        let record = MetricsRecord {
            iteration: t,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            mode,
            train_loss,
            tau: tau.tau().as_f64(),
            forward_count,
            backward_count,
            eval_loss,
            eval_error,
        };
        observer(&record, &network);
        records.push(record);
    }

    let final_train = evaluate(&network, train_set, config.loss)?;
    let final_eval = eval_set.map(|es| evaluate(&network, es, config.loss)).transpose()?;
    Ok(TrainOutcome { network, records, final_train, final_eval })
}

/// Scales output-gradient row `j` by `weights[j] / b` (or `1 / b` when no
/// weights are given), folding the re-scaling into the backward pass.
fn scale_rows<F: Scalar>(og: &mut Array2<F>, weights: &[F], inv_b: F) {
    for (j, mut row) in og.rows_mut().into_iter().enumerate() {
        let w = weights.get(j).copied().unwrap_or_else(F::one) * inv_b;
        row.mapv_inplace(|v| v * w);
    }
}

fn weighted_mean_loss<F: Scalar>(loss_vec: &ndarray::Array1<F>, weights: Option<&[F]>) -> f64 {
    let b = loss_vec.len() as f64;
    match weights {
        Some(w) => loss_vec.iter().zip(w).map(|(&l, &wi)| (l * wi).as_f64()).sum::<f64>() / b,
        None => loss_vec.iter().map(|l| l.as_f64()).sum::<f64>() / b,
    }
}

fn abort_if_non_finite<F: Scalar>(iteration: u64, train_loss: f64, grads: &GradientSet<F>) -> Result<()> {
    if !train_loss.is_finite() {
        return Err(Error::TrainingAborted { iteration, reason: format!("non-finite loss {train_loss}") });
    }
    if !grads.is_finite() {
        return Err(Error::TrainingAborted { iteration, reason: "non-finite gradient".to_string() });
    }
    Ok(())
}
