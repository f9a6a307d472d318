//! Pairwise ranking and classification losses.

use crate::num::Scalar;

/// Hinge on the score gap: zero once the positive outscores the negative
/// by at least `margin`, otherwise `margin - (positive - negative)`.
pub fn margin_rank_loss<F: Scalar>(positive: F, negative: F, margin: F) -> F {
    (margin - (positive - negative)).max(F::zero())
}

/// Derivatives of [`margin_rank_loss`] with respect to the two scores. The
/// boundary itself is treated as satisfied.
pub fn margin_rank_grad<F: Scalar>(positive: F, negative: F, margin: F) -> (F, F) {
    if margin - (positive - negative) > F::zero() {
        (-F::one(), F::one())
    } else {
        (F::zero(), F::zero())
    }
}

pub fn softmax<F: Scalar>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|z| (*z - max).exp()).collect();
    let total: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-ln softmax(logits)[label]`, computed in log space.
pub fn cross_entropy<F: Scalar>(logits: &[F], label: usize) -> F {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let log_total = logits.iter().map(|z| (*z - max).exp()).sum::<F>().ln() + max;
    log_total - logits[label]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn margin_examples() {
        assert_eq!(margin_rank_loss(2.0, 0.0, 1.0), 0.0);
        assert_eq!(margin_rank_loss(0.0, 0.0, 1.0), 1.0);
        assert!((margin_rank_loss(0.2, 0.5, 1.0) - 1.3f64).abs() < 1e-12);
        assert_eq!(margin_rank_grad(2.0, 0.0, 1.0), (0.0, 0.0));
        assert_eq!(margin_rank_grad(1.0, 0.0, 1.0), (0.0, 0.0));
        assert_eq!(margin_rank_grad(0.0, 0.0, 1.0), (-1.0, 1.0));
    }

    #[test]
    fn softmax_and_cross_entropy() {
        let p = softmax(&[0.0f64; 5]);
        assert!(p.iter().all(|x| (*x - 0.2).abs() < 1e-15));
        let logits = [1.0f64, -2.0, 0.5, 3.0, 0.0];
        let p = softmax(&logits);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((cross_entropy(&logits, 3) + p[3].ln()).abs() < 1e-12);
        let big = softmax(&[1000.0f64, 0.0]);
        assert!(big[0].is_finite() && big[1] >= 0.0);
    }

    proptest::proptest! {
        #[test]
        fn margin_loss_is_non_negative(a in -1e3f64..1e3, b in -1e3f64..1e3, m in 0.0f64..10.0) {
            let l = margin_rank_loss(a, b, m);
            proptest::prop_assert!(l >= 0.0);
            if a >= b + m + 1e-9 {
                proptest::prop_assert_eq!(l, 0.0);
            } else if a < b + m - 1e-9 {
                proptest::prop_assert!(l > 0.0);
            }
        }
    }
}
