//! Loss functions with closed-form per-sample values and gradients.
//!
//! Because the network's final activation is the identity, the gradient of the
//! loss with respect to the final pre-activations `z^(L)` has a closed form
//! for every kind, and its row norms are the importance scores used by the
//! sampler:
//!
//! - softmax cross-entropy: `softmax(z) - onehot(y)`
//! - squared error `||z - y||^2` (no 1/2 factor): `2 (z - y)`
//! - binary NLL through a sigmoid with `y in {-1, +1}`:
//!   `(sigmoid(y z_k) - 1) y` per component

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    SoftmaxCrossEntropy,
    SigmoidBinaryNll,
    SquaredError,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::SoftmaxCrossEntropy => "softmax-cross-entropy",
            LossKind::SigmoidBinaryNll => "sigmoid-binary-nll",
            LossKind::SquaredError => "squared-error",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "softmax-cross-entropy" => Ok(LossKind::SoftmaxCrossEntropy),
            "sigmoid-binary-nll" => Ok(LossKind::SigmoidBinaryNll),
            "squared-error" => Ok(LossKind::SquaredError),
            other => Err(Error::argument(format!("unknown loss kind `{other}`"))),
        }
    }
}

/// Per-sample training targets. The variant must match the loss kind:
/// class indices for softmax cross-entropy, signs in `{-1, +1}` for the
/// sigmoid binary NLL, real vectors for the squared error.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets<F: Scalar> {
    Classes(Vec<usize>),
    Signs(Vec<i8>),
    Vectors(Array2<F>),
}

impl<F: Scalar> Targets<F> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Signs(s) => s.len(),
            Targets::Vectors(v) => v.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Gather target rows by index (duplicates allowed).
    pub fn select(&self, indices: &[usize]) -> Targets<F> {
        match self {
            Targets::Classes(c) => Targets::Classes(indices.iter().map(|&i| c[i]).collect()),
            Targets::Signs(s) => Targets::Signs(indices.iter().map(|&i| s[i]).collect()),
            Targets::Vectors(v) => {
                let mut out = Array2::zeros((indices.len(), v.ncols()));
                for (j, &i) in indices.iter().enumerate() {
                    out.row_mut(j).assign(&v.row(i));
                }
                Targets::Vectors(out)
            }
        }
    }
}

fn check_shapes<F: Scalar>(kind: LossKind, z: &Array2<F>, targets: &Targets<F>) -> Result<()> {
    if targets.len() != z.nrows() {
        return Err(Error::shape(format!(
            "target count {} does not match batch size {}",
            targets.len(),
            z.nrows()
        )));
    }
    match (kind, targets) {
        (LossKind::SoftmaxCrossEntropy, Targets::Classes(classes)) => {
            if let Some(&bad) = classes.iter().find(|&&c| c >= z.ncols()) {
                return Err(Error::argument(format!(
                    "class index {bad} out of range for output width {}",
                    z.ncols()
                )));
            }
            Ok(())
        }
        (LossKind::SigmoidBinaryNll, Targets::Signs(signs)) => {
            if signs.iter().any(|&s| s != 1 && s != -1) {
                return Err(Error::argument("sign targets must be -1 or +1"));
            }
            Ok(())
        }
        (LossKind::SquaredError, Targets::Vectors(v)) => {
            if v.ncols() != z.ncols() {
                return Err(Error::shape(format!(
                    "target width {} does not match output width {}",
                    v.ncols(),
                    z.ncols()
                )));
            }
            Ok(())
        }
        _ => Err(Error::argument(format!(
            "target variant does not match loss kind `{}`",
            kind.name()
        ))),
    }
}

/// `log(1 + exp(a))`, stable for large |a|.
fn softplus<F: Scalar>(a: F) -> F {
    if a > F::zero() {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

fn sigmoid<F: Scalar>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// Per-sample loss values (all kinds are non-negative).
///
/// Softmax cross-entropy uses the log-sum-exp stabilized form.
pub fn loss_values<F: Scalar>(kind: LossKind, z: &Array2<F>, targets: &Targets<F>) -> Result<Array1<F>> {
    check_shapes(kind, z, targets)?;
    let batch = z.nrows();
    let mut out = Array1::zeros(batch);
    match (kind, targets) {
        (LossKind::SoftmaxCrossEntropy, Targets::Classes(classes)) => {
            for (i, row) in z.rows().into_iter().enumerate() {
                let max = row.iter().copied().fold(F::neg_infinity(), F::max);
                let sum_exp: F = row.iter().map(|&v| (v - max).exp()).sum();
                out[i] = max + sum_exp.ln() - row[classes[i]];
            }
        }
        (LossKind::SigmoidBinaryNll, Targets::Signs(signs)) => {
            for (i, row) in z.rows().into_iter().enumerate() {
                let y = F::from_f64_lossy(signs[i] as f64);
                // -log sigmoid(y z) = softplus(-y z), summed over components
                out[i] = row.iter().map(|&v| softplus(-(y * v))).sum();
            }
        }
        (LossKind::SquaredError, Targets::Vectors(targets)) => {
            for i in 0..batch {
                let diff_sq: F = z
                    .row(i)
                    .iter()
                    .zip(targets.row(i).iter())
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                out[i] = diff_sq;
            }
        }
        _ => unreachable!("checked by check_shapes"),
    }
    Ok(out)
}

/// Row `i` is the gradient of sample `i`'s loss with respect to the final
/// pre-activations `z_i^(L)`.
pub fn preactivation_gradients<F: Scalar>(
    kind: LossKind,
    z: &Array2<F>,
    targets: &Targets<F>,
) -> Result<Array2<F>> {
    check_shapes(kind, z, targets)?;
    let mut out = Array2::zeros(z.raw_dim());
    match (kind, targets) {
        (LossKind::SoftmaxCrossEntropy, Targets::Classes(classes)) => {
            for (i, row) in z.rows().into_iter().enumerate() {
                let max = row.iter().copied().fold(F::neg_infinity(), F::max);
                let sum_exp: F = row.iter().map(|&v| (v - max).exp()).sum();
                for (k, &v) in row.iter().enumerate() {
                    out[[i, k]] = (v - max).exp() / sum_exp;
                }
                out[[i, classes[i]]] = out[[i, classes[i]]] - F::one();
            }
        }
        (LossKind::SigmoidBinaryNll, Targets::Signs(signs)) => {
            for (i, row) in z.rows().into_iter().enumerate() {
                let y = F::from_f64_lossy(signs[i] as f64);
                for (k, &v) in row.iter().enumerate() {
                    out[[i, k]] = (sigmoid(y * v) - F::one()) * y;
                }
            }
        }
        (LossKind::SquaredError, Targets::Vectors(targets)) => {
            let two = F::from_f64_lossy(2.0);
            for i in 0..z.nrows() {
                for k in 0..z.ncols() {
                    out[[i, k]] = two * (z[[i, k]] - targets[[i, k]]);
                }
            }
        }
        _ => unreachable!("checked by check_shapes"),
    }
    Ok(out)
}

/// Gradient of the loss with respect to the network output `x^(L)`.
///
/// Under the identity final activation this coincides with
/// [`preactivation_gradients`]; kept as the named entry point feeding
/// [`crate::nn::backward`].
pub fn output_gradients<F: Scalar>(
    kind: LossKind,
    z: &Array2<F>,
    targets: &Targets<F>,
) -> Result<Array2<F>> {
    preactivation_gradients(kind, z, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    #[test]
    fn softmax_ce_uniform_logits() {
        let z = array![[0.0, 0.0]];
        let loss = loss_values(LossKind::SoftmaxCrossEntropy, &z, &Targets::Classes(vec![0])).unwrap();
        assert!((loss[0] - std::f64::consts::LN_2).abs() < 1e-12);
        let g = preactivation_gradients(LossKind::SoftmaxCrossEntropy, &z, &Targets::Classes(vec![0])).unwrap();
        assert!((g[[0, 0]] + 0.5).abs() < 1e-12);
        assert!((g[[0, 1]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn squared_error_at_target_is_zero() {
        let z = array![[0.3, -0.7], [1.0, 2.0]];
        let t = Targets::Vectors(z.clone());
        let loss = loss_values(LossKind::SquaredError, &z, &t).unwrap();
        assert_eq!(loss, array![0.0, 0.0]);
        let g = preactivation_gradients(LossKind::SquaredError, &z, &t).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sigmoid_nll_hand_value() {
        // psi = 2, y = +1 -> -ln(e^2 / (1 + e^2))
        let z = array![[2.0]];
        let loss = loss_values(LossKind::SigmoidBinaryNll, &z, &Targets::Signs(vec![1])).unwrap();
        let expected = -((2.0f64).exp() / (1.0 + (2.0f64).exp())).ln();
        assert!((loss[0] - expected).abs() < 1e-12);
        assert!((loss[0] - 0.126928).abs() < 1e-6);
    }

    #[test]
    fn gradients_match_finite_differences_of_loss_values() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        let batch = 6;
        let width = 4;
        let z = Array2::from_shape_fn((batch, width), |_| rng.gen::<f64>() * 4.0 - 2.0);
        let cases: Vec<(LossKind, Targets<f64>)> = vec![
            (
                LossKind::SoftmaxCrossEntropy,
                Targets::Classes((0..batch).map(|_| rng.gen_range(0..width)).collect()),
            ),
            (
                LossKind::SigmoidBinaryNll,
                Targets::Signs((0..batch).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect()),
            ),
            (
                LossKind::SquaredError,
                Targets::Vectors(Array2::from_shape_fn((batch, width), |_| rng.gen::<f64>() * 2.0 - 1.0)),
            ),
        ];
        let h = 1e-6;
        for (kind, targets) in cases {
            let grads = preactivation_gradients(kind, &z, &targets).unwrap();
            for i in 0..batch {
                for k in 0..width {
                    let mut zp = z.clone();
                    zp[[i, k]] += h;
                    let mut zm = z.clone();
                    zm[[i, k]] -= h;
                    let lp = loss_values(kind, &zp, &targets).unwrap()[i];
                    let lm = loss_values(kind, &zm, &targets).unwrap()[i];
                    let fd = (lp - lm) / (2.0 * h);
                    assert!(
                        (grads[[i, k]] - fd).abs() < 1e-6 * fd.abs().max(1.0),
                        "{:?} fd mismatch at ({i},{k}): {} vs {}",
                        kind,
                        grads[[i, k]],
                        fd
                    );
                }
            }
        }
    }

    #[test]
    fn output_gradients_alias_preactivation_gradients() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(6);
        let z = Array2::from_shape_fn((5, 3), |_| rng.gen::<f64>() * 2.0 - 1.0);
        for (kind, targets) in [
            (LossKind::SoftmaxCrossEntropy, Targets::Classes(vec![0, 1, 2, 1, 0])),
            (LossKind::SigmoidBinaryNll, Targets::Signs(vec![1, -1, 1, -1, 1])),
            (LossKind::SquaredError, Targets::Vectors(Array2::zeros((5, 3)))),
        ] {
            let a = output_gradients(kind, &z, &targets).unwrap();
            let b = preactivation_gradients(kind, &z, &targets).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn softmax_rows_sum_to_zero_and_are_norm_bounded() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(7);
        let z = Array2::from_shape_fn((32, 5), |_| rng.gen::<f64>() * 20.0 - 10.0);
        let classes: Vec<usize> = (0..32).map(|_| rng.gen_range(0..5)).collect();
        let g = preactivation_gradients(LossKind::SoftmaxCrossEntropy, &z, &Targets::Classes(classes)).unwrap();
        for row in g.rows() {
            let sum: f64 = row.sum();
            assert!(sum.abs() < 1e-12);
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= 2.0f64.sqrt() + 1e-12);
        }
    }

    #[test]
    fn sigmoid_nll_components_bounded_by_one() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(8);
        let z = Array2::from_shape_fn((32, 2), |_| rng.gen::<f64>() * 30.0 - 15.0);
        let signs: Vec<i8> = (0..32).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
        let g = preactivation_gradients(LossKind::SigmoidBinaryNll, &z, &Targets::Signs(signs)).unwrap();
        assert!(g.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn small_loss_implies_small_preactivation_gradient() {
        // Softmax CE and sigmoid NLL: gradient norm is O(loss) near zero, so
        // loss < 1e-6 gives score < 1e-3 with orders of magnitude to spare.
        let z = array![[30.0, 0.0], [0.0, 25.0]];
        let t = Targets::Classes(vec![0, 1]);
        let losses = loss_values(LossKind::SoftmaxCrossEntropy, &z, &t).unwrap();
        let g = preactivation_gradients(LossKind::SoftmaxCrossEntropy, &z, &t).unwrap();
        for i in 0..2 {
            assert!(losses[i] < 1e-6);
            let norm: f64 = g.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm < 1e-3);
        }

        let z = array![[16.0f64]];
        let t = Targets::Signs(vec![1]);
        let loss = loss_values(LossKind::SigmoidBinaryNll, &z, &t).unwrap()[0];
        let g = preactivation_gradients(LossKind::SigmoidBinaryNll, &z, &t).unwrap()[[0, 0]];
        assert!(loss < 1e-6 && g.abs() < 1e-3);

        // Squared error: the exact relation is score = 2 sqrt(loss), so the
        // 1e-3 score bound holds for loss < 2.5e-7.
        for &eps in &[1e-4f64, 1e-6, 1e-8] {
            let z = array![[eps, 0.0]];
            let t = Targets::Vectors(array![[0.0, 0.0]]);
            let loss = loss_values(LossKind::SquaredError, &z, &t).unwrap()[0];
            let g = preactivation_gradients(LossKind::SquaredError, &z, &t).unwrap();
            let norm: f64 = g.row(0).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 2.0 * loss.sqrt()).abs() < 1e-12 * norm.max(1.0));
            if loss < 2.5e-7 {
                assert!(norm < 1e-3);
            }
        }
    }

    #[test]
    fn rejects_mismatched_targets() {
        let z = array![[0.0, 0.0]];
        assert!(matches!(
            loss_values(LossKind::SoftmaxCrossEntropy, &z, &Targets::Classes(vec![2])),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            loss_values(LossKind::SoftmaxCrossEntropy, &z, &Targets::Signs(vec![1])),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            loss_values(LossKind::SquaredError, &z, &Targets::Vectors(array![[0.0]])),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            loss_values(LossKind::SigmoidBinaryNll, &z, &Targets::Signs(vec![2])),
            Err(Error::Argument(_))
        ));
    }
}
