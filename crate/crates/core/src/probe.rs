//! Instrumentation probes: gradient-distance variance probe and the
//! score-vs-oracle correlation analysis.
//!
//! The variance probe measures, for each scoring policy, the L2 distance
//! between the weighted mean gradient of a resampled small batch and the mean
//! gradient of the full presample, averaged over several resamples and
//! normalized by the uniform policy's distance.
//!
//! The correlation probe compares the normalized probabilities each cheap
//! policy produces against the exact gradient-norm probabilities.

use ndarray::Array2;
use rand::Rng;

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::losses::{self, LossKind};
use crate::nn::{self, Network};
use crate::sampling;
use crate::scalar::Scalar;
use crate::scoring::{self, ScoreKind};

/// One scoring policy's variance-probe outcome.
#[derive(Debug, Clone)]
pub struct VarianceProbeArm {
    pub kind: ScoreKind,
    /// Mean L2 distance between resampled-batch and presample gradients.
    pub mean_distance: f64,
    /// `mean_distance / mean_distance(uniform)`; the uniform arm reads 1.
    pub normalized_distance: f64,
}

/// Runs the variance probe on the current network state.
pub fn variance_probe<F: Scalar>(
    network: &Network<F>,
    dataset: &Dataset<F>,
    loss: LossKind,
    presample_size: usize,
    batch_size: usize,
    resamples: usize,
    arms: &[ScoreKind],
    rng: &mut impl Rng,
) -> Result<Vec<VarianceProbeArm>> {
    if batch_size == 0 || batch_size > presample_size {
        return Err(Error::argument("need 1 <= batch_size <= presample_size"));
    }
    if resamples == 0 {
        return Err(Error::argument("need at least one resample"));
    }

    let presample = dataset.uniform_batch(presample_size, rng)?;
    let (inputs, targets) = dataset.select(&presample);
    let trace = nn::forward(network, &inputs)?;
    let og = losses::output_gradients(loss, trace.output(), &targets)?;

    // mean gradient over the whole presample
    let mut og_mean = og.clone();
    let inv_big = F::from_f64_lossy(1.0 / presample_size as f64);
    og_mean.mapv_inplace(|v| v * inv_big);
    let reference = nn::backward(network, &trace, &og_mean)?.flatten();

    let inv_b = F::from_f64_lossy(1.0 / batch_size as f64);
    let mut uniform_mean = None;
    let mut out = Vec::with_capacity(arms.len());
    for &kind in arms {
        let scores = scoring::scores_for(kind, network, &trace, loss, &targets)?;
        let g = sampling::normalize(&scores)?;
        let mut total = 0.0f64;
        for _ in 0..resamples {
            let idx = sampling::draw(&g, batch_size, rng)?;
            let weights = sampling::importance_weights(&g, &idx);
            let batch_trace = trace.select_rows(&idx);
            let mut batch_og = Array2::zeros((batch_size, og.ncols()));
            for (j, &i) in idx.iter().enumerate() {
                let w = weights[j] * inv_b;
                for k in 0..og.ncols() {
                    batch_og[[j, k]] = og[[i, k]] * w;
                }
            }
            let estimate = nn::backward(network, &batch_trace, &batch_og)?.flatten();
            let dist_sq: f64 = estimate
                .iter()
                .zip(&reference)
                .map(|(a, b)| {
                    let d = a.as_f64() - b.as_f64();
                    d * d
                })
                .sum();
            total += dist_sq.sqrt();
        }
        let mean_distance = total / resamples as f64;
        if kind == ScoreKind::Uniform {
            uniform_mean = Some(mean_distance);
        }
        out.push(VarianceProbeArm { kind, mean_distance, normalized_distance: f64::NAN });
    }
    let denom = uniform_mean.ok_or_else(|| Error::argument("arms must include the uniform policy"))?;
    for arm in &mut out {
        arm.normalized_distance = if denom > 0.0 { arm.mean_distance / denom } else { f64::NAN };
    }
    Ok(out)
}

/// Per-sample probability triple (loss, upper-bound, gradient-norm).
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ProbabilityTriple {
    pub g_loss: f64,
    pub g_upper: f64,
    pub g_gradnorm: f64,
}

/// Correlation-probe output: probability triples plus summary statistics.
#[derive(Debug, Clone)]
pub struct CorrelationReport {
    pub triples: Vec<ProbabilityTriple>,
    /// Sum of squared differences between loss and gradient-norm probabilities.
    pub sse_loss: f64,
    /// Sum of squared differences between upper-bound and gradient-norm probabilities.
    pub sse_upper: f64,
    pub pearson_loss: f64,
    pub pearson_upper: f64,
}

/// Scores a uniformly drawn subset under all three policies and compares the
/// normalized probabilities against the gradient-norm ones.
pub fn correlation_probe<F: Scalar>(
    network: &Network<F>,
    dataset: &Dataset<F>,
    loss: LossKind,
    sample_size: usize,
    rng: &mut impl Rng,
) -> Result<CorrelationReport> {
    let subset = dataset.uniform_batch(sample_size.min(dataset.len()), rng)?;
    let (inputs, targets) = dataset.select(&subset);
    let trace = nn::forward(network, &inputs)?;

    let g_loss = sampling::normalize(&scoring::loss_scores(&trace, loss, &targets)?)?;
    let g_upper = sampling::normalize(&scoring::upper_bound_scores(&trace, loss, &targets)?)?;
    let g_grad = sampling::normalize(&scoring::gradient_norm_scores(network, &trace, loss, &targets)?)?;

    let to64 = |v: &[F]| -> Vec<f64> { v.iter().map(|x| x.as_f64()).collect() };
    let (l, u, n) = (to64(&g_loss), to64(&g_upper), to64(&g_grad));
    let triples = l
        .iter()
        .zip(&u)
        .zip(&n)
        .map(|((&g_loss, &g_upper), &g_gradnorm)| ProbabilityTriple { g_loss, g_upper, g_gradnorm })
        .collect();
    Ok(CorrelationReport {
        triples,
        sse_loss: sse(&l, &n),
        sse_upper: sse(&u, &n),
        pearson_loss: pearson(&l, &n),
        pearson_upper: pearson(&u, &n),
    })
}

/// Sum of squared differences.
pub fn sse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::synth_blobs;
    use crate::nn::{glorot_init, ActivationKind};
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    #[test]
    fn uniform_arm_normalizes_to_one() {
        let dataset = synth_blobs::<f64>(3, 40, 4, 1.2, 3).unwrap();
        let network = glorot_init(&[4, 8, 3], ActivationKind::Tanh, 4).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        let arms = [ScoreKind::Uniform, ScoreKind::UpperBound, ScoreKind::GradientNorm];
        let report = variance_probe(
            &network,
            &dataset,
            LossKind::SoftmaxCrossEntropy,
            64,
            16,
            5,
            &arms,
            &mut rng,
        )
        .unwrap();
        let uniform = report.iter().find(|a| a.kind == ScoreKind::Uniform).unwrap();
        assert!((uniform.normalized_distance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_vectors_have_zero_sse_and_unit_pearson() {
        let v = vec![0.1, 0.4, 0.2, 0.3];
        assert_eq!(sse(&v, &v), 0.0);
        assert!((pearson(&v, &v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_probe_produces_consistent_triples() {
        let dataset = synth_blobs::<f64>(3, 60, 4, 1.0, 6).unwrap();
        let network = glorot_init(&[4, 8, 3], ActivationKind::Tanh, 7).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(8);
        let report =
            correlation_probe(&network, &dataset, LossKind::SoftmaxCrossEntropy, 32, &mut rng).unwrap();
        assert_eq!(report.triples.len(), 32);
        for key in [|t: &ProbabilityTriple| t.g_loss, |t: &ProbabilityTriple| t.g_upper, |t: &ProbabilityTriple| t.g_gradnorm] {
            let sum: f64 = report.triples.iter().map(key).sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
        assert!(report.sse_upper >= 0.0 && report.sse_loss >= 0.0);
    }
}
