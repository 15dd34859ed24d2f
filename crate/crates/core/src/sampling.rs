//! Turning scores into a sampling distribution, drawing the small batch, and
//! computing the unbiasedness-restoring weights `w_j = 1/(B g_j)`.
//!
//! `normalize` floors the distribution at `EPSILON_FLOOR` by minimally mixing
//! in the uniform distribution, which keeps weights bounded. The gradient
//! estimator stays exactly unbiased because the weights are computed from the
//! same smoothed distribution that is sampled from.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scoring::ScoreVector;

/// Minimum probability any presampled point may receive.
pub const EPSILON_FLOOR: f64 = 1e-8;

/// Probabilities, selected indices, and re-scaling weights for one importance
/// iteration.
#[derive(Debug, Clone)]
pub struct SamplingPlan<F: Scalar> {
    /// Normalized distribution over the presample, sums to 1.
    pub probabilities: Vec<F>,
    /// `b` draws (with replacement) into the presample.
    pub selected_indices: Vec<usize>,
    /// `w_j = 1 / (B g_{selected_indices[j]})`.
    pub weights: Vec<F>,
}

/// Normalizes scores into a probability distribution.
///
/// All-zero scores fall back to the uniform distribution; otherwise, if any
/// probability would drop below [`EPSILON_FLOOR`], the distribution is mixed
/// with uniform using the smallest mixing weight that restores the floor.
pub fn normalize<F: Scalar>(scores: &ScoreVector<F>) -> Result<Vec<F>> {
    let n = scores.len();
    if scores.scores.iter().any(|s| !s.is_finite() || *s < F::zero()) {
        return Err(Error::argument("scores must be finite and non-negative"));
    }
    let total: F = scores.scores.iter().copied().sum();
    let uniform = F::one() / F::from_f64_lossy(n as f64);
    if total.as_f64() < 1e-12 {
        return Ok(vec![uniform; n]);
    }
    let mut g: Vec<F> = scores.scores.iter().map(|&s| s / total).collect();
    let floor = F::from_f64_lossy(EPSILON_FLOOR);
    let min = g.iter().copied().fold(F::infinity(), F::min);
    if min < floor {
        if uniform <= floor {
            // distributions this long cannot honor the floor; use uniform
            return Ok(vec![uniform; n]);
        }
        // smallest lambda with (1-lambda) min + lambda/n >= floor
        let lambda = (floor - min) / (uniform - min);
        for v in g.iter_mut() {
            *v = (F::one() - lambda) * *v + lambda * uniform;
        }
    }
    Ok(g)
}

fn check_distribution<F: Scalar>(g: &[F]) -> Result<()> {
    if g.is_empty() {
        return Err(Error::argument("empty distribution"));
    }
    if g.iter().any(|p| !p.is_finite() || *p < F::zero()) {
        return Err(Error::argument("distribution entries must be finite and non-negative"));
    }
    let total = g.iter().copied().sum::<F>().as_f64();
    // accumulation tolerance scales with the scalar's precision
    let tol = (g.len() as f64 * 8.0 * F::epsilon().as_f64()).max(1e-12);
    if (total - 1.0).abs() > tol {
        return Err(Error::argument(format!("distribution sums to {total}, not 1")));
    }
    Ok(())
}

/// Draws `b` i.i.d. indices (with replacement) from `g` by inverse-CDF lookup.
pub fn draw<F: Scalar>(g: &[F], b: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    check_distribution(g)?;
    if b == 0 {
        return Err(Error::argument("batch size must be at least 1"));
    }
    let mut cdf = Vec::with_capacity(g.len());
    let mut acc = F::zero();
    for &p in g {
        acc = acc + p;
        cdf.push(acc);
    }
    let total = acc;
    let mut out = Vec::with_capacity(b);
    for _ in 0..b {
        let u = F::from_f64_lossy(rng.gen::<f64>()) * total;
        // first index with cdf[i] > u
        let mut idx = cdf.partition_point(|&c| c <= u);
        if idx >= g.len() {
            // u rounded up to the total; take the last index with mass
            idx = g.iter().rposition(|&p| p > F::zero()).expect("sums to 1");
        }
        out.push(idx);
    }
    Ok(out)
}

/// Re-scaling weights `w_j = 1/(B g_{i_j})` with `B = g.len()`.
///
/// `normalize`'s floor guarantees no selected probability is zero.
pub fn importance_weights<F: Scalar>(g: &[F], indices: &[usize]) -> Vec<F> {
    let b_len = F::from_f64_lossy(g.len() as f64);
    indices
        .iter()
        .map(|&i| {
            let p = g[i];
            assert!(p > F::zero(), "selected index {i} has zero probability");
            F::one() / (b_len * p)
        })
        .collect()
}

/// Normalize, draw, and weigh in one step.
pub fn plan<F: Scalar>(scores: &ScoreVector<F>, b: usize, rng: &mut impl Rng) -> Result<SamplingPlan<F>> {
    let probabilities = normalize(scores)?;
    let selected_indices = draw(&probabilities, b, rng)?;
    let weights = importance_weights(&probabilities, &selected_indices);
    Ok(SamplingPlan { probabilities, selected_indices, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::ScoreKind;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn sv(scores: Vec<f64>) -> ScoreVector<f64> {
        ScoreVector::new(scores, ScoreKind::Loss).unwrap()
    }

    #[test]
    fn normalize_proportional_and_uniform_fallback() {
        assert_eq!(normalize(&sv(vec![1.0, 1.0, 1.0, 1.0])).unwrap(), vec![0.25; 4]);
        assert_eq!(normalize(&sv(vec![3.0, 1.0])).unwrap(), vec![0.75, 0.25]);
        assert_eq!(normalize(&sv(vec![0.0, 0.0, 0.0])).unwrap(), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn normalize_floors_tiny_probabilities() {
        let g = normalize(&sv(vec![1.0, 1e-16])).unwrap();
        assert!(g[1] >= EPSILON_FLOOR * (1.0 - 1e-12));
        let sum: f64 = g.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn draw_one_hot_always_returns_that_index() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        let g = vec![0.0, 0.0, 1.0, 0.0];
        let idx = draw(&g, 20, &mut rng).unwrap();
        assert!(idx.iter().all(|&i| i == 2));
    }

    #[test]
    fn draw_frequencies_converge_to_distribution() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
        let g = vec![0.25; 4];
        let n = 1_000_000usize;
        let idx = draw(&g, n, &mut rng).unwrap();
        let mut counts = [0usize; 4];
        for &i in &idx {
            counts[i] += 1;
        }
        for c in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.25).abs() < 0.002, "freq {freq}");
        }
    }

    #[test]
    fn draw_is_reproducible_for_fixed_seed() {
        let g = normalize(&sv(vec![0.2, 1.0, 3.5, 0.7])).unwrap();
        let a = draw(&g, 32, &mut Xoshiro256PlusPlus::seed_from_u64(99)).unwrap();
        let b = draw(&g, 32, &mut Xoshiro256PlusPlus::seed_from_u64(99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn draw_rejects_invalid_distribution() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        assert!(draw(&[0.5, 0.2], 1, &mut rng).is_err());
        assert!(draw(&[0.5, -0.5, 1.0], 1, &mut rng).is_err());
        assert!(draw(&[0.5, 0.5], 0, &mut rng).is_err());
    }

    #[test]
    fn weights_formula_hand_cases() {
        // uniform over B gives all weights 1
        let g = vec![0.25f64; 4];
        let w = importance_weights(&g, &[0, 1, 2, 3, 1]);
        assert!(w.iter().all(|&v| (v - 1.0).abs() < 1e-15));

        let g = vec![0.5f64, 0.25, 0.125, 0.125];
        let w = importance_weights(&g, &[0, 1, 2]);
        assert_eq!(w, vec![0.5, 1.0, 2.0]);
    }

    #[test]
    fn exhaustive_expectation_recovers_uniform_mean() {
        // E_g[w f] = sum_i g_i w_i f_i = (1/B) sum_i f_i exactly
        let scores = sv(vec![0.3, 2.0, 0.0, 5.5, 1.2]);
        let g = normalize(&scores).unwrap();
        let payload = [2.0, -1.0, 7.0, 0.25, 4.0];
        let all: Vec<usize> = (0..g.len()).collect();
        let w = importance_weights(&g, &all);
        let weighted: f64 = (0..g.len()).map(|i| g[i] * w[i] * payload[i]).sum();
        let uniform_mean: f64 = payload.iter().sum::<f64>() / payload.len() as f64;
        assert!((weighted - uniform_mean).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn normalize_outputs_valid_floored_distribution(
            scores in proptest::collection::vec(0.0f64..1e6, 1..64)
        ) {
            let g = normalize(&sv(scores)).unwrap();
            let sum: f64 = g.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-10);
            for &p in &g {
                prop_assert!(p >= EPSILON_FLOOR * (1.0 - 1e-9) || g.len() as f64 > 1.0 / EPSILON_FLOOR);
            }
        }

        #[test]
        fn unbiasedness_over_exhaustive_enumeration(
            scores in proptest::collection::vec(0.0f64..100.0, 2..16),
            payload in proptest::collection::vec(-10.0f64..10.0, 16)
        ) {
            let n = scores.len();
            let g = normalize(&sv(scores)).unwrap();
            let all: Vec<usize> = (0..n).collect();
            let w = importance_weights(&g, &all);
            let weighted: f64 = (0..n).map(|i| g[i] * w[i] * payload[i]).sum();
            let uniform_mean: f64 = payload[..n].iter().sum::<f64>() / n as f64;
            prop_assert!((weighted - uniform_mean).abs() < 1e-10 * uniform_mean.abs().max(1.0));
        }
    }
}
