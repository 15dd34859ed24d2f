//! Minimal feedforward network with deterministic forward/backward passes.
//!
//! The network is a stack of affine layers (weights + bias) followed by
//! slope-bounded elementwise activations. The final layer is always
//! `Identity`: output non-linearities (softmax, sigmoid) live inside the loss
//! functions so their pre-activation gradients have closed forms.
//!
//! [`forward`] records every pre-activation and activation in a
//! [`ForwardTrace`]; [`backward`] consumes a trace plus per-sample output
//! gradients and returns batch-summed parameter gradients. Per-sample
//! re-scaling is done by pre-multiplying output-gradient rows before calling
//! [`backward`].

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Elementwise activation following a layer's affine map.
///
/// All four kinds have derivative magnitude bounded by 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Rectifier,
    Tanh,
    Logistic,
    Identity,
}

impl ActivationKind {
    pub fn apply<F: Scalar>(self, z: F) -> F {
        match self {
            ActivationKind::Rectifier => {
                if z > F::zero() {
                    z
                } else {
                    F::zero()
                }
            }
            ActivationKind::Tanh => z.tanh(),
            ActivationKind::Logistic => {
                // numerically stable sigmoid
                if z >= F::zero() {
                    F::one() / (F::one() + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (F::one() + e)
                }
            }
            ActivationKind::Identity => z,
        }
    }

    /// Derivative at pre-activation `z`. The rectifier's derivative at
    /// exactly 0 is defined as 0 so results are deterministic.
    pub fn derivative<F: Scalar>(self, z: F) -> F {
        match self {
            ActivationKind::Rectifier => {
                if z > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            ActivationKind::Tanh => {
                let t = z.tanh();
                F::one() - t * t
            }
            ActivationKind::Logistic => {
                let s = self.apply(z);
                s * (F::one() - s)
            }
            ActivationKind::Identity => F::one(),
        }
    }

    /// Slope bound K with |sigma'(z)| <= K for all z.
    pub fn slope_bound<F: Scalar>(self) -> F {
        F::one()
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Rectifier => "rectifier",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Logistic => "logistic",
            ActivationKind::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "rectifier" | "relu" => Ok(ActivationKind::Rectifier),
            "tanh" => Ok(ActivationKind::Tanh),
            "logistic" | "sigmoid" => Ok(ActivationKind::Logistic),
            "identity" | "linear" => Ok(ActivationKind::Identity),
            other => Err(Error::argument(format!("unknown activation `{other}`"))),
        }
    }
}

/// One affine layer: `z = x W^T + b`, `x' = sigma(z)`.
///
/// Weights have shape `(out_dim, in_dim)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<F: Scalar> {
    pub weights: Array2<F>,
    pub bias: Array1<F>,
    pub activation: ActivationKind,
}

impl<F: Scalar> Layer<F> {
    pub fn new(weights: Array2<F>, bias: Array1<F>, activation: ActivationKind) -> Result<Self> {
        if bias.len() != weights.nrows() {
            return Err(Error::shape(format!(
                "bias length {} does not match weight rows {}",
                bias.len(),
                weights.nrows()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::domain("layer parameters must be finite".to_string()));
        }
        Ok(Layer { weights, bias, activation })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn slope_bound(&self) -> F {
        self.activation.slope_bound()
    }
}

/// Ordered stack of layers; the last layer's activation is `Identity`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<F: Scalar> {
    layers: Vec<Layer<F>>,
}

impl<F: Scalar> Network<F> {
    pub fn new(layers: Vec<Layer<F>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::argument("network needs at least one layer"));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[1].in_dim() != pair[0].out_dim() {
                return Err(Error::shape(format!(
                    "layer {} input width {} does not chain with layer {} output width {}",
                    l + 1,
                    pair[1].in_dim(),
                    l,
                    pair[0].out_dim()
                )));
            }
        }
        let last = layers.last().expect("non-empty");
        if last.activation != ActivationKind::Identity {
            return Err(Error::argument(
                "final layer activation must be identity; output non-linearities belong to the loss",
            ));
        }
        Ok(Network { layers })
    }

    pub fn layers(&self) -> &[Layer<F>] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer<F>] {
        &mut self.layers
    }

    /// Number of layers L.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    /// Layer widths `[M_0, M_1, ..., M_L]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.depth() + 1);
        dims.push(self.input_dim());
        dims.extend(self.layers.iter().map(Layer::out_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters flattened in layer order (weights row-major, then bias).
    pub fn flatten_params(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend(layer.weights.iter().copied());
            out.extend(layer.bias.iter().copied());
        }
        out
    }
}

/// Per-layer pre-activations and activations recorded by [`forward`].
///
/// `activations[0]` is the input batch; `activations[l]` and
/// `pre_activations[l-1]` correspond to layer `l` for `l = 1..=L`.
#[derive(Debug, Clone)]
pub struct ForwardTrace<F: Scalar> {
    pre_activations: Vec<Array2<F>>,
    activations: Vec<Array2<F>>,
}

impl<F: Scalar> ForwardTrace<F> {
    pub fn batch_size(&self) -> usize {
        self.activations[0].nrows()
    }

    pub fn depth(&self) -> usize {
        self.pre_activations.len()
    }

    /// Input batch `x^(0)`.
    pub fn input(&self) -> &Array2<F> {
        &self.activations[0]
    }

    /// Activation `x^(l)` for `l = 0..=L`.
    pub fn activation(&self, l: usize) -> &Array2<F> {
        &self.activations[l]
    }

    /// Pre-activation `z^(l)` for `l = 1..=L`.
    pub fn pre_activation(&self, l: usize) -> &Array2<F> {
        &self.pre_activations[l - 1]
    }

    /// Network output `x^(L)` (equals `z^(L)` under the identity final activation).
    pub fn output(&self) -> &Array2<F> {
        self.activations.last().expect("non-empty")
    }

    /// Gather trace rows for the given sample indices (duplicates allowed).
    pub fn select_rows(&self, indices: &[usize]) -> ForwardTrace<F> {
        let gather = |m: &Array2<F>| {
            let mut out = Array2::zeros((indices.len(), m.ncols()));
            for (j, &i) in indices.iter().enumerate() {
                out.row_mut(j).assign(&m.row(i));
            }
            out
        };
        ForwardTrace {
            pre_activations: self.pre_activations.iter().map(&gather).collect(),
            activations: self.activations.iter().map(&gather).collect(),
        }
    }

    fn check_matches<T: Scalar>(&self, network: &Network<T>) -> Result<()> {
        if self.depth() != network.depth() {
            return Err(Error::shape(format!(
                "trace depth {} does not match network depth {}",
                self.depth(),
                network.depth()
            )));
        }
        let dims = network.layer_dims();
        for (l, z) in self.pre_activations.iter().enumerate() {
            if z.ncols() != dims[l + 1] {
                return Err(Error::shape(format!(
                    "trace layer {} width {} does not match network width {}",
                    l + 1,
                    z.ncols(),
                    dims[l + 1]
                )));
            }
        }
        if self.activations[0].ncols() != dims[0] {
            return Err(Error::shape("trace input width does not match network"));
        }
        Ok(())
    }
}

/// One gradient matrix (plus bias vector) per layer, shape-matched to the network.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<F: Scalar> {
    pub weight_grads: Vec<Array2<F>>,
    pub bias_grads: Vec<Array1<F>>,
}

impl<F: Scalar> GradientSet<F> {
    pub fn zeros_like(network: &Network<F>) -> Self {
        GradientSet {
            weight_grads: network
                .layers()
                .iter()
                .map(|l| Array2::zeros((l.out_dim(), l.in_dim())))
                .collect(),
            bias_grads: network.layers().iter().map(|l| Array1::zeros(l.out_dim())).collect(),
        }
    }

    /// L2 norm over all entries (weights and biases).
    pub fn l2_norm(&self) -> F {
        self.squared_l2_norm().sqrt()
    }

    pub fn squared_l2_norm(&self) -> F {
        let w: F = self.weight_grads.iter().map(|g| g.iter().map(|v| *v * *v).sum()).sum();
        let b: F = self.bias_grads.iter().map(|g| g.iter().map(|v| *v * *v).sum()).sum();
        w + b
    }

    pub fn is_finite(&self) -> bool {
        self.weight_grads.iter().all(|g| g.iter().all(|v| v.is_finite()))
            && self.bias_grads.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }

    /// All entries flattened in layer order (weights row-major, then bias),
    /// matching [`Network::flatten_params`].
    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::new();
        for (w, b) in self.weight_grads.iter().zip(&self.bias_grads) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &GradientSet<F>) {
        for (a, b) in self.weight_grads.iter_mut().zip(&other.weight_grads) {
            *a += b;
        }
        for (a, b) in self.bias_grads.iter_mut().zip(&other.bias_grads) {
            *a += b;
        }
    }
}

/// Runs the batch through the network, recording every `z^(l)` and `x^(l)`.
pub fn forward<F: Scalar>(network: &Network<F>, inputs: &Array2<F>) -> Result<ForwardTrace<F>> {
    if inputs.ncols() != network.input_dim() {
        return Err(Error::shape(format!(
            "input width {} does not match network input width {}",
            inputs.ncols(),
            network.input_dim()
        )));
    }
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("forward inputs must be finite"));
    }
    let mut pre_activations = Vec::with_capacity(network.depth());
    let mut activations = Vec::with_capacity(network.depth() + 1);
    activations.push(inputs.clone());
    for layer in network.layers() {
        let x = activations.last().expect("non-empty");
        let mut z = x.dot(&layer.weights.t());
        for mut row in z.rows_mut() {
            row += &layer.bias;
        }
        let x_next = z.mapv(|v| layer.activation.apply(v));
        pre_activations.push(z);
        activations.push(x_next);
    }
    Ok(ForwardTrace { pre_activations, activations })
}

/// Backpropagates per-sample output gradients `dL/dx^(L)` through the trace
/// and returns batch-summed parameter gradients.
///
/// Per-sample re-scaling weights are applied by the caller: pre-multiply row
/// `i` of `output_grads` by `w_i` before calling.
pub fn backward<F: Scalar>(
    network: &Network<F>,
    trace: &ForwardTrace<F>,
    output_grads: &Array2<F>,
) -> Result<GradientSet<F>> {
    trace.check_matches(network)?;
    let batch = trace.batch_size();
    if output_grads.nrows() != batch || output_grads.ncols() != network.output_dim() {
        return Err(Error::shape(format!(
            "output_grads shape ({}, {}) does not match (batch {}, output width {})",
            output_grads.nrows(),
            output_grads.ncols(),
            batch,
            network.output_dim()
        )));
    }

    let mut grads = GradientSet::zeros_like(network);
    // dL/dx^(l), starting at l = L
    let mut delta = output_grads.clone();
    for (l, layer) in network.layers().iter().enumerate().rev() {
        let z = trace.pre_activation(l + 1);
        let dz = match layer.activation {
            ActivationKind::Identity => delta,
            act => {
                let mut dz = delta;
                dz.zip_mut_with(z, |d, &zv| *d = *d * act.derivative(zv));
                dz
            }
        };
        let x_prev = trace.activation(l);
        grads.weight_grads[l] = dz.t().dot(x_prev);
        grads.bias_grads[l] = dz.sum_axis(Axis(0));
        if l > 0 {
            delta = dz.dot(&layer.weights);
        } else {
            delta = dz; // unused; keeps the loop shape simple
        }
    }
    Ok(grads)
}

/// Per-sample L2 norms of the full parameter gradient, one entry per batch row.
///
/// Uses the rank-one structure of single-sample layer gradients: for sample
/// `i` the layer-`l` weight gradient is the outer product
/// `dz_i^(l) (x_i^(l-1))^T`, so its Frobenius norm factorizes as
/// `||dz_i^(l)|| * ||x_i^(l-1)||` and the bias gradient contributes
/// `||dz_i^(l)||`. One batched sweep computes every sample's norm; the
/// batch-size-1 backward loop serves as the independent oracle in tests.
pub fn per_sample_gradient_norms<F: Scalar>(
    network: &Network<F>,
    trace: &ForwardTrace<F>,
    output_grads: &Array2<F>,
) -> Result<Vec<F>> {
    trace.check_matches(network)?;
    let batch = trace.batch_size();
    if output_grads.nrows() != batch || output_grads.ncols() != network.output_dim() {
        return Err(Error::shape("output_grads shape does not match trace/network"));
    }

    let mut sq_norms = vec![F::zero(); batch];
    let mut delta = output_grads.clone();
    for (l, layer) in network.layers().iter().enumerate().rev() {
        let z = trace.pre_activation(l + 1);
        let mut dz = delta;
        if layer.activation != ActivationKind::Identity {
            dz.zip_mut_with(z, |d, &zv| *d = *d * layer.activation.derivative(zv));
        }
        let x_prev = trace.activation(l);
        for i in 0..batch {
            let dz_sq: F = dz.row(i).iter().map(|v| *v * *v).sum();
            let x_sq: F = x_prev.row(i).iter().map(|v| *v * *v).sum();
            sq_norms[i] = sq_norms[i] + dz_sq * (x_sq + F::one());
        }
        delta = if l > 0 { dz.dot(&layer.weights) } else { dz };
    }
    Ok(sq_norms.into_iter().map(|s| s.sqrt()).collect())
}

/// Glorot-uniform initialization: weights drawn from
/// `U(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out)))`, biases zero.
///
/// Hidden layers use the given activation; the final layer is `Identity`.
/// Deterministic for a fixed seed.
pub fn glorot_init<F: Scalar>(
    layer_dims: &[usize],
    hidden_activation: ActivationKind,
    seed: u64,
) -> Result<Network<F>> {
    if layer_dims.len() < 2 {
        return Err(Error::argument("glorot_init needs at least two layer dims"));
    }
    if layer_dims.iter().any(|&d| d == 0) {
        return Err(Error::argument("layer dims must be positive"));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(layer_dims.len() - 1);
    for (l, pair) in layer_dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut weights = Array2::zeros((fan_out, fan_in));
        for w in weights.iter_mut() {
            let u: f64 = rng.gen::<f64>(); // [0, 1)
            *w = F::from_f64_lossy((2.0 * u - 1.0) * limit);
        }
        let activation = if l + 2 == layer_dims.len() {
            ActivationKind::Identity
        } else {
            hidden_activation
        };
        layers.push(Layer::new(weights, Array1::zeros(fan_out), activation)?);
    }
    Network::new(layers)
}
