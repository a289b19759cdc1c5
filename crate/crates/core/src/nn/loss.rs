//! Weighted binary cross-entropy over probability maps.

use ndarray::{Array3, NdFloat};

use crate::error::{Error, Result};

/// Predictions are clamped to [EPS, 1-EPS] before the logs.
pub const BCE_EPS: f64 = 1e-7;

/// Mean weighted BCE: `-mean(w*y*ln p + (1-y)*ln(1-p))`, plus dL/dp.
///
/// The gradient is zero where the prediction was clamped.
pub fn weighted_bce<F: NdFloat>(
    pred: &Array3<F>,
    target: &Array3<F>,
    w: F,
) -> Result<(F, Array3<F>)> {
    if pred.dim() != target.dim() {
        let (a, b, c) = pred.dim();
        let (d, e, f) = target.dim();
        return Err(Error::Shape {
            op: "weighted_bce",
            left: vec![a, b, c],
            right: vec![d, e, f],
        });
    }
    if w <= F::zero() {
        return Err(Error::InvalidArgument("positive-class weight must be > 0".into()));
    }
    let eps = F::from(BCE_EPS).unwrap();
    let one = F::one();
    let n = F::from(pred.len()).unwrap();
    let mut loss = F::zero();
    let mut grad = pred.clone();
    for (g, (&p, &y)) in grad.iter_mut().zip(pred.iter().zip(target.iter())) {
        let clamped = p < eps || p > one - eps;
        let pc = p.max(eps).min(one - eps);
        loss = loss - (w * y * pc.ln() + (one - y) * (one - pc).ln());
        *g = if clamped {
            F::zero()
        } else {
            -(w * y / pc - (one - y) / (one - pc)) / n
        };
    }
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_half_prediction_costs_ln2() {
        let pred = Array3::<f64>::from_elem((1, 4, 4), 0.5);
        let target = Array3::<f64>::ones((1, 4, 4));
        let (loss, _) = weighted_bce(&pred, &target, 1.0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let w = 37.2;
        let target = Array::from_shape_fn((1, 4, 4), |(_, i, j)| ((i + j) % 2) as f64);
        let pred = target.clone();
        let (loss, _) = weighted_bce(&pred, &target, w).unwrap();
        assert!(loss >= 0.0);
        assert!(loss <= w * (1.0 / (1.0 - BCE_EPS)).ln() + 1e-12);
    }

    #[test]
    fn weight_one_equals_unweighted() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pred = Array::from_shape_fn((1, 5, 5), |_| rng.gen_range(0.01..0.99));
        let target = Array::from_shape_fn((1, 5, 5), |_| f64::from(rng.gen_bool(0.3)));
        let (wl, _) = weighted_bce(&pred, &target, 1.0).unwrap();
        let manual: f64 = pred
            .iter()
            .zip(target.iter())
            .map(|(&p, &y)| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
            .sum::<f64>()
            / pred.len() as f64;
        assert!((wl - manual).abs() < 1e-12);
    }

    #[test]
    fn loss_is_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let pred = Array::from_shape_fn((1, 4, 4), |_| rng.gen_range(0.0..1.0));
            let target = Array::from_shape_fn((1, 4, 4), |_| f64::from(rng.gen_bool(0.5)));
            let w = rng.gen_range(0.1..100.0);
            let (loss, _) = weighted_bce(&pred, &target, w).unwrap();
            assert!(loss >= 0.0);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let w = 37.2;
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pred = Array::from_shape_fn((2, 6, 6), |_| rng.gen_range(0.05..0.95));
            let target = Array::from_shape_fn((2, 6, 6), |_| f64::from(rng.gen_bool(0.4)));
            let (_, grad) = weighted_bce(&pred, &target, w).unwrap();
            let eps = 1e-6;
            for idx in 0..pred.len() {
                let orig = pred.as_slice_mut().unwrap()[idx];
                pred.as_slice_mut().unwrap()[idx] = orig + eps;
                let lp = weighted_bce(&pred, &target, w).unwrap().0;
                pred.as_slice_mut().unwrap()[idx] = orig - eps;
                let lm = weighted_bce(&pred, &target, w).unwrap().0;
                pred.as_slice_mut().unwrap()[idx] = orig;
                let fd = (lp - lm) / (2.0 * eps);
                let an = grad.as_slice().unwrap()[idx];
                assert!(
                    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4) < 1e-5,
                    "idx {idx}: fd {fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn shape_mismatch_is_error() {
        let pred = Array3::<f64>::zeros((1, 4, 4));
        let target = Array3::<f64>::zeros((1, 4, 5));
        assert!(weighted_bce(&pred, &target, 1.0).is_err());
    }
}
