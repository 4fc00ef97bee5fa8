use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Class weights `(not-an-onset, onset)` for the cross-entropy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSpec {
    pub class_weights: (f64, f64),
}

impl LossSpec {
    pub fn new(w_non_onset: f64, w_onset: f64) -> Result<Self> {
        if !(w_non_onset > 0.0 && w_onset > 0.0 && w_non_onset.is_finite() && w_onset.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "class weights must be positive, got ({w_non_onset}, {w_onset})"
            )));
        }
        Ok(LossSpec {
            class_weights: (w_non_onset, w_onset),
        })
    }
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            class_weights: (1.0, 1.0),
        }
    }
}

/// Row-wise softmax of `[N, K]` logits.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, k] = logits.dims2()?;
    let mut out = Vec::with_capacity(n * k);
    for row in logits.data().chunks(k) {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b.as_f64()));
        let e: Vec<f64> = row.iter().map(|&z| (z.as_f64() - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|&v| T::from_f64(v / s)));
    }
    Tensor::from_vec(&[n, k], out)
}

/// Weighted soft-target cross-entropy over `[N, 2]` logits.
///
/// `loss = mean_i( -sum_k c_k * t_ik * log softmax(z_i)_k )`. Returns the loss
/// and its exact gradient with respect to the logits.
pub fn weighted_soft_xent<T: Scalar>(
    logits: &Tensor<T>,
    targets: &Tensor<T>,
    spec: &LossSpec,
) -> Result<(T, Tensor<T>)> {
    let [n, k] = logits.dims2()?;
    if k != 2 || targets.shape() != logits.shape() {
        return Err(Error::Shape(format!(
            "weighted_soft_xent: logits {:?}, targets {:?} (need matching [N, 2])",
            logits.shape(),
            targets.shape()
        )));
    }
    let weights = [spec.class_weights.0, spec.class_weights.1];
    let mut loss = 0.0f64;
    let mut grad = Vec::with_capacity(n * 2);
    for (i, (z, t)) in logits.data().chunks(2).zip(targets.data().chunks(2)).enumerate() {
        let t = [t[0].as_f64(), t[1].as_f64()];
        if t.iter().any(|&v| !(0.0..=1.0).contains(&v)) || (t[0] + t[1] - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "target row {i} = ({}, {}) is not a distribution",
                t[0], t[1]
            )));
        }
        let z = [z[0].as_f64(), z[1].as_f64()];
        let m = z[0].max(z[1]);
        let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
        let logp = [z[0] - lse, z[1] - lse];
        let a = [weights[0] * t[0], weights[1] * t[1]];
        loss -= a[0] * logp[0] + a[1] * logp[1];
        let total = a[0] + a[1];
        for c in 0..2 {
            grad.push(T::from_f64((logp[c].exp() * total - a[c]) / n as f64));
        }
    }
    Ok((T::from_f64(loss / n as f64), Tensor::from_vec(&[n, 2], grad)?))
}

/// `lambda * sum ||w||^2 / 2` over the given tensors, with gradients `lambda * w`.
pub fn l2_penalty<T: Scalar>(params: &[&Tensor<T>], lambda: f64) -> (f64, Vec<Tensor<T>>) {
    let penalty = lambda * params.iter().map(|p| p.sum_squares()).sum::<f64>() / 2.0;
    let l = T::from_f64(lambda);
    let grads = params.iter().map(|p| p.map(|w| l * w)).collect();
    (penalty, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn t2(rows: &[[f64; 2]]) -> Tensor<f64> {
        Tensor::from_vec(&[rows.len(), 2], rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn near_onset_target_at_zero_logits_is_ln2() {
        let (loss, _) = weighted_soft_xent(&t2(&[[0.0, 0.0]]), &t2(&[[0.75, 0.25]]), &LossSpec::default()).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_prediction_has_vanishing_loss() {
        let (loss, _) = weighted_soft_xent(&t2(&[[60.0, 0.0]]), &t2(&[[1.0, 0.0]]), &LossSpec::default()).unwrap();
        assert!(loss < 1e-20);
    }

    #[test]
    fn onset_weight_scales_onset_term_linearly() {
        let z = t2(&[[0.3, -0.2]]);
        let t = t2(&[[0.75, 0.25]]);
        let (base, _) = weighted_soft_xent(&z, &t, &LossSpec::new(1.0, 1.0).unwrap()).unwrap();
        let (non_only, _) = weighted_soft_xent(&z, &t2(&[[1.0, 0.0]]), &LossSpec::default()).unwrap();
        let (on_only, _) = weighted_soft_xent(&z, &t2(&[[0.0, 1.0]]), &LossSpec::default()).unwrap();
        let (doubled, _) = weighted_soft_xent(&z, &t, &LossSpec::new(1.0, 2.0).unwrap()).unwrap();
        assert!((base - (0.75 * non_only + 0.25 * on_only)).abs() < 1e-12);
        assert!((doubled - (0.75 * non_only + 0.5 * on_only)).abs() < 1e-12);
    }

    #[test]
    fn uniform_weights_hard_targets_equal_plain_cross_entropy() {
        let mut rng = substream(8, "xent", &[]);
        let z = Tensor::<f64>::randn(&[16, 2], 3.0, &mut rng);
        let labels: Vec<usize> = (0..16).map(|i| (i * 7) % 3 % 2).collect();
        let t = Tensor::from_fn(&[16, 2], |i| if labels[i / 2] == i % 2 { 1.0 } else { 0.0 });
        let (loss, _) = weighted_soft_xent(&z, &t, &LossSpec::default()).unwrap();
        let direct: f64 = (0..16)
            .map(|i| {
                let r = &z.data()[i * 2..i * 2 + 2];
                -(r[labels[i]].exp() / (r[0].exp() + r[1].exp())).ln()
            })
            .sum::<f64>()
            / 16.0;
        assert!((loss - direct).abs() < 1e-6);
    }

    #[test]
    fn rejects_non_distribution_targets() {
        let err = weighted_soft_xent(&t2(&[[0.0, 0.0]]), &t2(&[[0.5, 0.6]]), &LossSpec::default());
        assert!(err.is_err());
        assert!(LossSpec::new(0.0, 1.0).is_err());
    }

    #[test]
    fn l2_hand_values() {
        let w = Tensor::<f64>::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        let (p, g) = l2_penalty(&[&w], 1.0);
        assert_eq!(p, 12.5);
        assert_eq!(g[0].data(), &[3.0, 4.0]);
        let (p0, g0) = l2_penalty(&[&w], 0.0);
        assert_eq!(p0, 0.0);
        assert!(g0[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn l2_is_permutation_invariant() {
        let a = Tensor::<f64>::from_vec(&[2], vec![1.5, -2.0]).unwrap();
        let b = Tensor::<f64>::from_vec(&[3], vec![0.5, 0.25, 7.0]).unwrap();
        assert_eq!(l2_penalty(&[&a, &b], 0.3).0, l2_penalty(&[&b, &a], 0.3).0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(&t2(&[[1000.0, 0.0], [-3.0, 2.0]])).unwrap();
        for r in p.data().chunks(2) {
            assert!((r[0] + r[1] - 1.0).abs() < 1e-12);
        }
    }
}
