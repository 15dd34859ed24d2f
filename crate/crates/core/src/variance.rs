//! Variance-reduction accounting and the equivalent-batch-increment tau.
//!
//! The single-draw weighted gradient estimator under a sampling distribution
//! `g` has trace-of-variance smaller than the uniform one by
//! `(mean ||G_i||)^2 * B * ||g - u||^2` when `g` is proportional to the
//! per-sample gradient norms. Dividing by the uniform variance and bounding
//! gives `1/tau = 1 - ||g - u||^2 / sum(g_i^2)`: sampling from `g` is worth at
//! least a `tau`-fold batch-size increase. The trainer switches to importance
//! sampling when the smoothed `tau` crosses a threshold; the guaranteed-speedup
//! threshold `(B + 3b) / (3b)` comes from a cost model where a backward pass
//! costs twice a forward pass.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Guard for the one-hot limit of `1/tau`; caps tau at 1e6.
const MIN_INVERSE_TAU: f64 = 1e-6;

/// Which tau formula the estimator applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TauMode {
    /// `tau = (1 - ||g-u||^2 / sum g_i^2)^-1`.
    #[default]
    Standard,
    /// Square root of the standard value (the variant the original
    /// experiments ran after the 1/tau^2 correction).
    Sqrt,
}

impl TauMode {
    pub fn name(self) -> &'static str {
        match self {
            TauMode::Standard => "standard",
            TauMode::Sqrt => "sqrt",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "standard" => Ok(TauMode::Standard),
            "sqrt" => Ok(TauMode::Sqrt),
            other => Err(Error::argument(format!("unknown tau mode `{other}`"))),
        }
    }
}

/// Instantaneous equivalent-batch increment for one distribution.
///
/// For a valid distribution the value always lies in `[1, B]` (uniform gives
/// 1, one-hot gives B).
pub fn instantaneous_tau<F: Scalar>(g: &[F], mode: TauMode) -> Result<F> {
    if g.len() < 2 {
        return Err(Error::argument("tau needs a distribution of length >= 2"));
    }
    if g.iter().any(|p| !p.is_finite() || *p < F::zero()) {
        return Err(Error::argument("distribution entries must be finite and non-negative"));
    }
    let n = F::from_f64_lossy(g.len() as f64);
    let u = F::one() / n;
    let sum_sq: F = g.iter().map(|&p| p * p).sum();
    let dist_sq: F = g.iter().map(|&p| (p - u) * (p - u)).sum();
    let inv_tau = (F::one() - dist_sq / sum_sq).max(F::from_f64_lossy(MIN_INVERSE_TAU));
    let tau = F::one() / inv_tau;
    Ok(match mode {
        TauMode::Standard => tau,
        TauMode::Sqrt => tau.sqrt(),
    })
}

/// Exponentially smoothed tau estimate with its switching threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct TauEstimator<F: Scalar> {
    tau: F,
    a_tau: F,
    tau_th: F,
    mode: TauMode,
}

impl<F: Scalar> TauEstimator<F> {
    /// Starts at `tau = 0`, below any valid threshold.
    ///
    /// `a_tau = 1` freezes the estimate (every update is a no-op); training
    /// configs restrict the coefficient to `[0, 1)`.
    pub fn new(a_tau: F, tau_th: F, mode: TauMode) -> Result<Self> {
        if !(a_tau >= F::zero() && a_tau <= F::one()) {
            return Err(Error::argument("a_tau must lie in [0, 1]"));
        }
        if !(tau_th >= F::one()) {
            return Err(Error::argument("tau_th must be >= 1"));
        }
        Ok(TauEstimator { tau: F::zero(), a_tau, tau_th, mode })
    }

    pub fn tau(&self) -> F {
        self.tau
    }

    pub fn threshold(&self) -> F {
        self.tau_th
    }

    pub fn mode(&self) -> TauMode {
        self.mode
    }

    /// `tau <- a_tau * tau + (1 - a_tau) * instantaneous_tau(g)`.
    pub fn update(&mut self, g: &[F]) -> Result<F> {
        let inst = instantaneous_tau(g, self.mode)?;
        self.tau = self.a_tau * self.tau + (F::one() - self.a_tau) * inst;
        Ok(self.tau)
    }

    /// True once the smoothed tau strictly exceeds the threshold.
    pub fn should_switch(&self) -> bool {
        self.tau > self.tau_th
    }
}

/// `Tr V_u[G] - Tr V_g[w G]` computed directly from the definitions:
/// `E_u[||G||^2] - E_g[w^2 ||G||^2]` with `w_i = 1/(B g_i)`.
pub fn variance_reduction<F: Scalar>(norms: &[F], g: &[F]) -> Result<F> {
    if norms.len() != g.len() {
        return Err(Error::argument(format!(
            "norms length {} does not match distribution length {}",
            norms.len(),
            g.len()
        )));
    }
    if norms.is_empty() {
        return Err(Error::argument("empty inputs"));
    }
    let b = F::from_f64_lossy(norms.len() as f64);
    let e_uniform: F = norms.iter().map(|&n| n * n).sum::<F>() / b;
    // E_g[w^2 ||G||^2] = sum_i g_i (1/(B g_i))^2 ||G_i||^2 = (1/B^2) sum_i ||G_i||^2 / g_i
    let mut e_weighted = F::zero();
    for (&n, &p) in norms.iter().zip(g) {
        if p == F::zero() {
            if n == F::zero() {
                continue; // zero-mass point with zero gradient contributes nothing
            }
            return Err(Error::argument("zero probability at a sample with non-zero gradient"));
        }
        e_weighted = e_weighted + (n * n) / p;
    }
    e_weighted = e_weighted / (b * b);
    Ok(e_uniform - e_weighted)
}

/// Closed form of the same difference for `g` proportional to `norms`:
/// `(mean ||G_i||)^2 * B * ||g - u||^2`.
pub fn variance_reduction_closed_form<F: Scalar>(norms: &[F]) -> Result<F> {
    if norms.is_empty() {
        return Err(Error::argument("empty norms"));
    }
    let b = F::from_f64_lossy(norms.len() as f64);
    let total: F = norms.iter().copied().sum();
    if total == F::zero() {
        return Ok(F::zero());
    }
    let u = F::one() / b;
    let mean = total / b;
    let dist_sq: F = norms.iter().map(|&n| (n / total - u) * (n / total - u)).sum();
    Ok(mean * mean * b * dist_sq)
}

/// Maximum variance reduction achievable by resampling `b` of `B` presampled
/// points: `1/b - 1/B`.
pub fn max_variance_reduction(presample: usize, batch: usize) -> Result<f64> {
    if batch == 0 || presample == 0 {
        return Err(Error::argument("sizes must be positive"));
    }
    if batch > presample {
        return Err(Error::argument(format!("batch {batch} exceeds presample {presample}")));
    }
    Ok(1.0 / batch as f64 - 1.0 / presample as f64)
}

/// Tau above which importance sampling has guaranteed speedup:
/// `(B + 3b) / (3b)` under the forward = 1, backward = 2 cost model.
pub fn guaranteed_speedup_threshold(presample: usize, batch: usize) -> f64 {
    (presample + 3 * batch) as f64 / (3 * batch) as f64
}

/// The guaranteed-speedup condition `B + 3b < 3 tau b`.
pub fn speedup_holds(tau: f64, presample: usize, batch: usize) -> bool {
    ((presample + 3 * batch) as f64) < 3.0 * tau * batch as f64
}
