//! Brute-force oracle suite checking every formula at desk scale.
//!
//! Each check is self-contained and independent of the implementation path it
//! verifies: gradients against central finite differences, the closed-form
//! variance difference against the direct definition, the gradient-norm bound
//! against exact per-sample backpropagation, sampler unbiasedness against
//! exhaustive enumeration, and tau against a Monte-Carlo variance ratio.
//!
//! `run_all` powers the `validate` CLI subcommand; the acceptance suite runs
//! the same checks at the tolerances pinned here.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::losses::{self, LossKind, Targets};
use crate::nn::{self, ActivationKind, Network};
use crate::sampling;
use crate::scoring::{self, ScoreKind, ScoreVector};
use crate::variance::{self, TauMode};

/// Outcome of one oracle check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub details: String,
}

impl CheckReport {
    fn new(name: &'static str, passed: bool, details: String) -> Self {
        CheckReport { name, passed, details }
    }
}

/// Central finite differences against [`nn::backward`] for every parameter of
/// `networks` random networks (relative error < 1e-4, absolute floor 1e-6).
pub fn check_finite_difference_gradients(networks: usize, seed: u64) -> CheckReport {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let activations = [ActivationKind::Tanh, ActivationKind::Rectifier, ActivationKind::Logistic];
    let losses_cycle = [LossKind::SoftmaxCrossEntropy, LossKind::SquaredError, LossKind::SigmoidBinaryNll];
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;

    for trial in 0..networks {
        let act = activations[trial % activations.len()];
        let kind = losses_cycle[trial % losses_cycle.len()];
        let hidden = 3 + rng.gen_range(0..5);
        let out = if kind == LossKind::SoftmaxCrossEntropy { 3 } else { 2 };
        let dims = vec![4, hidden, out];
        let net: Network<f64> = nn::glorot_init(&dims, act, rng.gen()).expect("valid dims");
        let batch = 4usize;
        let inputs = Array2::from_shape_fn((batch, dims[0]), |_| rng.gen::<f64>() * 2.0 - 1.0);
        let targets = random_targets(kind, batch, out, &mut rng);

        let total_loss = |n: &Network<f64>| -> f64 {
            let trace = nn::forward(n, &inputs).expect("forward");
            losses::loss_values(kind, trace.output(), &targets)
                .expect("loss")
                .iter()
                .sum()
        };

        let trace = nn::forward(&net, &inputs).expect("forward");
        let og = losses::output_gradients(kind, trace.output(), &targets).expect("grads");
        let analytic = nn::backward(&net, &trace, &og).expect("backward");

        let h = 1e-5;
        let mut probe = |l: usize, r: usize, c: Option<usize>, an: f64| {
            let mut plus = net.clone();
            let mut minus = net.clone();
            match c {
                Some(c) => {
                    plus.layers_mut()[l].weights[[r, c]] += h;
                    minus.layers_mut()[l].weights[[r, c]] -= h;
                }
                None => {
                    plus.layers_mut()[l].bias[r] += h;
                    minus.layers_mut()[l].bias[r] -= h;
                }
            }
            let fd = (total_loss(&plus) - total_loss(&minus)) / (2.0 * h);
            let err = (an - fd).abs();
            let rel = err / an.abs().max(fd.abs()).max(1e-6 / 1e-4);
            if rel > worst {
                worst = rel;
            }
            checked += 1;
        };
        for l in 0..net.depth() {
            let (rows, cols) = (net.layers()[l].out_dim(), net.layers()[l].in_dim());
            for r in 0..rows {
                for c in 0..cols {
                    probe(l, r, Some(c), analytic.weight_grads[l][[r, c]]);
                }
                probe(l, r, None, analytic.bias_grads[l][r]);
            }
        }
    }
    CheckReport::new(
        "finite-difference-gradients",
        worst < 1e-4,
        format!("{checked} parameters over {networks} networks, max relative error {worst:.3e} (limit 1e-4)"),
    )
}

/// Closed-form variance difference vs the direct definition, for random norm
/// vectors with `g` proportional to the norms (1e-10 relative).
pub fn check_variance_identity(instances: usize, seed: u64) -> CheckReport {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let b = rng.gen_range(2..=64);
        let norms: Vec<f64> = (0..b).map(|_| rng.gen::<f64>() * 10.0 + 1e-3).collect();
        let total: f64 = norms.iter().sum();
        let g: Vec<f64> = norms.iter().map(|n| n / total).collect();
        let direct = variance::variance_reduction(&norms, &g).expect("valid");
        let closed = variance::variance_reduction_closed_form(&norms).expect("valid");
        let rel = (direct - closed).abs() / direct.abs().max(closed.abs()).max(1.0);
        if rel > worst {
            worst = rel;
        }
    }
    CheckReport::new(
        "variance-difference-identity",
        worst <= 1e-10,
        format!("{instances} random instances, max relative gap {worst:.3e} (limit 1e-10)"),
    )
}

/// `L * rho * score_i >= ||G_i||` for random MLPs under all three loss kinds;
/// any violation fails.
pub fn check_bound_validity(networks: usize, batch: usize, seed: u64) -> CheckReport {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let kinds = [LossKind::SoftmaxCrossEntropy, LossKind::SquaredError, LossKind::SigmoidBinaryNll];
    let mut violations = 0usize;
    let mut samples = 0usize;
    let mut tightest = f64::INFINITY;

    for trial in 0..networks {
        let depth = 2 + trial % 3; // 2..=4 layers
        let mut dims = vec![6 + rng.gen_range(0..8)];
        for _ in 0..depth - 1 {
            dims.push(8 + rng.gen_range(0..25)); // hidden widths 8..=32
        }
        dims.push(3 + rng.gen_range(0..3));
        let act = if trial % 2 == 0 { ActivationKind::Tanh } else { ActivationKind::Rectifier };
        let net: Network<f64> = nn::glorot_init(&dims, act, rng.gen()).expect("valid dims");
        let inputs = Array2::from_shape_fn((batch, dims[0]), |_| rng.gen::<f64>() * 2.0 - 1.0);
        let trace = nn::forward(&net, &inputs).expect("forward");
        let rho = scoring::empirical_rho(&net, &trace).expect("rho");
        let scale = net.depth() as f64 * rho.rho;

        for kind in kinds {
            let out = net.output_dim();
            let targets = random_targets(kind, batch, out, &mut rng);
            let upper = scoring::upper_bound_scores(&trace, kind, &targets).expect("scores");
            let exact = scoring::gradient_norm_scores(&net, &trace, kind, &targets).expect("oracle");
            for i in 0..batch {
                samples += 1;
                let bound = scale * upper.scores[i];
                if bound + 1e-12 < exact.scores[i] {
                    violations += 1;
                } else if exact.scores[i] > 1e-12 {
                    tightest = tightest.min(bound / exact.scores[i]);
                }
            }
        }
    }
    CheckReport::new(
        "gradient-norm-bound",
        violations == 0,
        format!("{samples} samples over {networks} networks x 3 loss kinds, {violations} violations, tightest bound ratio {tightest:.3}"),
    )
}

/// Exhaustive-enumeration unbiasedness of the weighted estimator for
/// presamples up to `max_presample` (b = 1), 1e-10 absolute-relative.
pub fn check_unbiasedness(max_presample: usize, seed: u64) -> CheckReport {
    check_unbiasedness_with(max_presample, seed, &sampling::importance_weights::<f64>)
}

pub(crate) fn check_unbiasedness_with(
    max_presample: usize,
    seed: u64,
    weight_fn: &dyn Fn(&[f64], &[usize]) -> Vec<f64>,
) -> CheckReport {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut cases = 0usize;
    for b in 2..=max_presample {
        for _ in 0..8 {
            let scores: Vec<f64> = (0..b).map(|_| rng.gen::<f64>() * 10.0 + 1e-6).collect();
            let payload: Vec<f64> = (0..b).map(|_| rng.gen::<f64>() * 20.0 - 10.0).collect();
            let g = sampling::normalize(&ScoreVector::new(scores, ScoreKind::Loss).expect("valid")).expect("valid");
            let all: Vec<usize> = (0..b).collect();
            let w = weight_fn(&g, &all);
            let weighted: f64 = (0..b).map(|i| g[i] * w[i] * payload[i]).sum();
            let uniform: f64 = payload.iter().sum::<f64>() / b as f64;
            let err = (weighted - uniform).abs() / uniform.abs().max(1.0);
            if err > worst {
                worst = err;
            }
            cases += 1;
        }
    }
    CheckReport::new(
        "estimator-unbiasedness",
        worst <= 1e-10,
        format!("{cases} exhaustive enumerations (B <= {max_presample}, b = 1), max deviation {worst:.3e} (limit 1e-10)"),
    )
}

/// Monte-Carlo check that the variance ratio under importance sampling stays
/// below `1/tau` (within 3 sigma of the Monte-Carlo error).
pub fn check_tau_monte_carlo(vectors: usize, draws: usize, seed: u64) -> CheckReport {
    check_tau_monte_carlo_with(vectors, draws, seed, &|g| {
        variance::instantaneous_tau(g, TauMode::Standard).expect("valid distribution")
    })
}

pub(crate) fn check_tau_monte_carlo_with(
    vectors: usize,
    draws: usize,
    seed: u64,
    tau_fn: &dyn Fn(&[f64]) -> f64,
) -> CheckReport {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let dim = 8usize;
    let mut failures = 0usize;
    let mut worst_margin = f64::NEG_INFINITY;

    for _ in 0..vectors {
        let b = rng.gen_range(8..=32);
        let gs: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let norms: Vec<f64> = gs.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
        let g = sampling::normalize(&ScoreVector::new(norms.clone(), ScoreKind::GradientNorm).expect("valid"))
            .expect("valid");
        let tau = tau_fn(&g);

        let mean_vec: Vec<f64> =
            (0..dim).map(|k| gs.iter().map(|v| v[k]).sum::<f64>() / b as f64).collect();
        let mean_sq: f64 = mean_vec.iter().map(|x| x * x).sum();
        let second_moment_u: f64 = norms.iter().map(|n| n * n).sum::<f64>() / b as f64;
        let var_u = second_moment_u - mean_sq;

        // Monte-Carlo estimate of E_g[w^2 ||G||^2]
        let idx = sampling::draw(&g, draws, &mut rng).expect("valid");
        let w = sampling::importance_weights(&g, &idx);
        let samples: Vec<f64> = idx.iter().zip(&w).map(|(&i, &wi)| wi * wi * norms[i] * norms[i]).collect();
        let m = samples.iter().sum::<f64>() / draws as f64;
        let sd = (samples.iter().map(|s| (s - m) * (s - m)).sum::<f64>() / (draws as f64 - 1.0)).sqrt();
        let se = sd / (draws as f64).sqrt();

        let var_g = m - mean_sq;
        let ratio = var_g / var_u;
        let limit = 1.0 / tau + 3.0 * se / var_u + 1e-10;
        let margin = ratio - limit;
        if margin > worst_margin {
            worst_margin = margin;
        }
        if ratio > limit {
            failures += 1;
        }
    }
    CheckReport::new(
        "tau-variance-semantics",
        failures == 0,
        format!("{vectors} score vectors x {draws} draws, {failures} ratio violations, worst margin {worst_margin:.3e}"),
    )
}

fn random_targets(kind: LossKind, batch: usize, out: usize, rng: &mut impl Rng) -> Targets<f64> {
    match kind {
        LossKind::SoftmaxCrossEntropy => Targets::Classes((0..batch).map(|_| rng.gen_range(0..out)).collect()),
        LossKind::SigmoidBinaryNll => {
            Targets::Signs((0..batch).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect())
        }
        LossKind::SquaredError => {
            Targets::Vectors(Array2::from_shape_fn((batch, out), |_| rng.gen::<f64>() * 2.0 - 1.0))
        }
    }
}

/// The full oracle suite at its release-gate sizes.
pub fn run_all() -> Vec<CheckReport> {
    vec![
        check_finite_difference_gradients(10, 0x5eed_0001),
        check_variance_identity(1000, 0x5eed_0002),
        check_bound_validity(20, 16, 0x5eed_0003),
        check_unbiasedness(12, 0x5eed_0004),
        check_tau_monte_carlo(20, 100_000, 0x5eed_0005),
    ]
}
