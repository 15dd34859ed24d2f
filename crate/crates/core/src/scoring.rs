//! Per-sample importance scores and the gradient-norm bound validator.
//!
//! Three scoring policies produce a [`ScoreVector`] over a forward-traced
//! batch:
//!
//! - [`upper_bound_scores`]: the norm of the loss gradient with respect to the
//!   final pre-activations. Times `L * rho` this upper-bounds the full
//!   per-sample parameter-gradient norm; the constant is dropped because
//!   sampling probabilities are normalized.
//! - [`loss_scores`]: the per-sample loss value.
//! - [`gradient_norm_scores`]: the exact per-sample parameter-gradient norm,
//!   computed by running backpropagation with a batch size of one. This is
//!   the expensive oracle the cheap scores are measured against.
//!
//! [`empirical_rho`] computes the constant `rho` so tests can check the bound
//! `L * rho * score_i >= ||G_i||` sample by sample.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::losses::{self, LossKind, Targets};
use crate::nn::{self, ForwardTrace, Network};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    /// Constant scores; sampling degenerates to uniform.
    Uniform,
    /// Pre-activation loss-gradient norm (one forward pass).
    UpperBound,
    /// Per-sample loss value (one forward pass).
    Loss,
    /// Exact per-sample gradient norm (one backward pass per sample).
    GradientNorm,
}

impl ScoreKind {
    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Uniform => "uniform",
            ScoreKind::UpperBound => "upper-bound",
            ScoreKind::Loss => "loss",
            ScoreKind::GradientNorm => "gradient-norm",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "uniform" | "uniform-only" => Ok(ScoreKind::Uniform),
            "upper-bound" => Ok(ScoreKind::UpperBound),
            "loss" => Ok(ScoreKind::Loss),
            "gradient-norm" => Ok(ScoreKind::GradientNorm),
            other => Err(Error::argument(format!("unknown score kind `{other}`"))),
        }
    }
}

/// Non-negative importance scores for a scored batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector<F: Scalar> {
    pub scores: Vec<F>,
    pub kind: ScoreKind,
}

impl<F: Scalar> ScoreVector<F> {
    pub fn new(scores: Vec<F>, kind: ScoreKind) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::argument("score vector must not be empty"));
        }
        if scores.iter().any(|s| !s.is_finite() || *s < F::zero()) {
            return Err(Error::domain("scores must be finite and non-negative"));
        }
        Ok(ScoreVector { scores, kind })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Row norms of the pre-activation loss gradients: one forward pass, no
/// backward pass. The `L * rho` constant of the bound is dropped.
pub fn upper_bound_scores<F: Scalar>(
    trace: &ForwardTrace<F>,
    kind: LossKind,
    targets: &Targets<F>,
) -> Result<ScoreVector<F>> {
    let grads = losses::preactivation_gradients(kind, trace.output(), targets)?;
    let scores = grads
        .rows()
        .into_iter()
        .map(|row| row.iter().map(|v| *v * *v).sum::<F>().sqrt())
        .collect();
    ScoreVector::new(scores, ScoreKind::UpperBound)
}

/// Per-sample loss values as scores.
pub fn loss_scores<F: Scalar>(
    trace: &ForwardTrace<F>,
    kind: LossKind,
    targets: &Targets<F>,
) -> Result<ScoreVector<F>> {
    let values = losses::loss_values(kind, trace.output(), targets)?;
    ScoreVector::new(values.to_vec(), ScoreKind::Loss)
}

/// Exact per-sample parameter-gradient norms via batch-size-1 backward passes.
pub fn gradient_norm_scores<F: Scalar>(
    network: &Network<F>,
    trace: &ForwardTrace<F>,
    kind: LossKind,
    targets: &Targets<F>,
) -> Result<ScoreVector<F>> {
    let output_grads = losses::output_gradients(kind, trace.output(), targets)?;
    let batch = trace.batch_size();
    let mut scores = Vec::with_capacity(batch);
    for i in 0..batch {
        let trace_i = trace.select_rows(&[i]);
        let og_i = output_grads.row(i).insert_axis(Axis(0)).to_owned();
        let grads = nn::backward(network, &trace_i, &og_i)?;
        scores.push(grads.l2_norm());
    }
    ScoreVector::new(scores, ScoreKind::GradientNorm)
}

/// All-ones scores (uniform sampling).
pub fn uniform_scores<F: Scalar>(n: usize) -> Result<ScoreVector<F>> {
    ScoreVector::new(vec![F::one(); n], ScoreKind::Uniform)
}

/// Dispatch on a [`ScoreKind`]; the trainer and probes call through this.
pub fn scores_for<F: Scalar>(
    score_kind: ScoreKind,
    network: &Network<F>,
    trace: &ForwardTrace<F>,
    loss_kind: LossKind,
    targets: &Targets<F>,
) -> Result<ScoreVector<F>> {
    match score_kind {
        ScoreKind::Uniform => uniform_scores(trace.batch_size()),
        ScoreKind::UpperBound => upper_bound_scores(trace, loss_kind, targets),
        ScoreKind::Loss => loss_scores(trace, loss_kind, targets),
        ScoreKind::GradientNorm => gradient_norm_scores(network, trace, loss_kind, targets),
    }
}

/// Empirical estimate of the bound constant `rho`.
#[derive(Debug, Clone)]
pub struct RhoEstimate<F: Scalar> {
    /// `max_{l,i} ||x_i^(l-1)|| * ||Delta_i^(l)||`.
    pub rho: F,
    /// Per-layer maxima over samples of the same product, length L.
    pub per_layer_terms: Vec<F>,
}

/// Computes `rho = max_{l,i} ||x_i^(l-1)||_2 * ||Delta_i^(l)||`, where
/// `Delta_i^(l)` propagates the final pre-activation gradient back to layer
/// `l` (alternating activation-derivative diagonals and transposed weights).
///
/// For `l = L` the propagation is the empty product whose operator norm is
/// exactly 1. For `l < L` the operator norm is upper-bounded by the Frobenius
/// norm, which keeps the bound direction valid without an SVD.
pub fn empirical_rho<F: Scalar>(network: &Network<F>, trace: &ForwardTrace<F>) -> Result<RhoEstimate<F>> {
    if trace.depth() != network.depth() || trace.input().ncols() != network.input_dim() {
        return Err(Error::shape("trace does not match network"));
    }
    let depth = network.depth();
    let batch = trace.batch_size();
    let out_dim = network.output_dim();
    let mut per_layer: Vec<F> = vec![F::zero(); depth];

    let row_norm = |m: &Array2<F>, i: usize| -> F { m.row(i).iter().map(|v| *v * *v).sum::<F>().sqrt() };

    for i in 0..batch {
        // l = L: empty product, norm exactly 1
        let x_norm = row_norm(trace.activation(depth - 1), i);
        if x_norm > per_layer[depth - 1] {
            per_layer[depth - 1] = x_norm;
        }

        // l = L-1 .. 1: Delta^(l) = Sigma'_l(z^(l)) theta_{l+1}^T Delta^(l+1)
        let mut delta: Array2<F> = Array2::eye(out_dim);
        for l in (1..depth).rev() {
            let layer_above = &network.layers()[l]; // theta_{l+1} in 1-based terms
            let mut propagated = layer_above.weights.t().dot(&delta);
            let z = trace.pre_activation(l);
            let act = network.layers()[l - 1].activation;
            for (r, mut row) in propagated.rows_mut().into_iter().enumerate() {
                let d = act.derivative(z[[i, r]]);
                row.mapv_inplace(|v| v * d);
            }
            delta = propagated;

            let frob = delta.iter().map(|v| *v * *v).sum::<F>().sqrt();
            let term = row_norm(trace.activation(l - 1), i) * frob;
            if term > per_layer[l - 1] {
                per_layer[l - 1] = term;
            }
        }
    }

    let rho = per_layer.iter().copied().fold(F::zero(), F::max);
    Ok(RhoEstimate { rho, per_layer_terms: per_layer })
}
