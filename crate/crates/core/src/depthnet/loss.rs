use crate::error::{Error, Result};
use crate::grid::{DepthMap, ScalarField};

/// Scale-invariant log loss
/// `(1/N) Σ r² − (1/(2N²)) (Σ r)²` with `r = log d − pred_log`.
pub fn scale_invariant_loss(pred_log: &ScalarField, gt: &DepthMap) -> Result<f64> {
    if pred_log.dims() != gt.dims() {
        return Err(Error::shape(gt.dims(), pred_log.dims()));
    }
    Ok(sc_inv_from_logs(pred_log.values(), gt.values()))
}

/// The loss on raw slices. `gt` must be strictly positive.
pub(crate) fn sc_inv_from_logs(pred_log: &[f64], gt: &[f64]) -> f64 {
    let n = pred_log.len() as f64;
    let (mut sq, mut sum) = (0.0, 0.0);
    for (p, d) in pred_log.iter().zip(gt) {
        let r = d.ln() - p;
        sq += r * r;
        sum += r;
    }
    (sq / n - sum * sum / (2.0 * n * n)).max(0.0)
}

/// Loss and its gradient with respect to `pred_log`, for precomputed `log d`.
///
/// `∂L/∂p_i = (−2 r_i + (Σ r)/N) / N`.
pub(crate) fn sc_inv_with_grad(pred_log: &[f32], gt_log: &[f32], grad: &mut [f32]) -> f64 {
    let n = pred_log.len() as f64;
    let (mut sq, mut sum) = (0.0f64, 0.0f64);
    for (p, g) in pred_log.iter().zip(gt_log) {
        let r = f64::from(*g) - f64::from(*p);
        sq += r * r;
        sum += r;
    }
    let mean = sum / n;
    for ((out, p), g) in grad.iter_mut().zip(pred_log).zip(gt_log) {
        let r = f64::from(*g) - f64::from(*p);
        *out = ((-2.0 * r + mean) / n) as f32;
    }
    sq / n - sum * sum / (2.0 * n * n)
}

/// Checks positivity before evaluating; used where ground truth comes from outside.
pub fn checked_scale_invariant_loss(pred_log: &ScalarField, gt: &[f64]) -> Result<f64> {
    if let Some(v) = gt.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!("ground-truth depth {v} is not positive")));
    }
    if gt.len() != pred_log.values().len() {
        return Err(Error::Input("length mismatch".into()));
    }
    Ok(sc_inv_from_logs(pred_log.values(), gt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{FieldRole, Grid};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(values: Vec<f64>, h: usize, w: usize) -> ScalarField {
        ScalarField::new(FieldRole::LogDepth, Grid::from_vec(h, w, values).unwrap()).unwrap()
    }

    #[test]
    fn exact_prediction_has_zero_loss() {
        let gt = DepthMap::from_vec(2, 2, vec![5.0, 10.0, 20.0, 40.0]).unwrap();
        let pred = field(gt.values().iter().map(|d| d.ln()).collect(), 2, 2);
        assert!(scale_invariant_loss(&pred, &gt).unwrap().abs() < 1e-15);
    }

    #[test]
    fn two_pixel_hand_example() {
        // residuals (0, 2): (1/2)(0 + 4) - (1/8)(2)^2 = 1.5
        let gt = DepthMap::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        let pred = field(vec![0.0, -2.0], 1, 2);
        assert!((scale_invariant_loss(&pred, &gt).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_errors() {
        let gt = DepthMap::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        assert!(scale_invariant_loss(&field(vec![0.0; 4], 2, 2), &gt).is_err());
        assert!(checked_scale_invariant_loss(&field(vec![0.0, 0.0], 1, 2), &[1.0, 0.0]).is_err());
    }

    proptest! {
        /// log gt + c everywhere leaves c² − c²/2 = c²/2.
        #[test]
        fn constant_shift_gives_half_square(c in -3.0f64..3.0, seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt = DepthMap::new(Grid::from_fn(8, 8, |_, _| rng.random_range(5.0..100.0))).unwrap();
            let pred = field(gt.values().iter().map(|d| d.ln() + c).collect(), 8, 8);
            let l = scale_invariant_loss(&pred, &gt).unwrap();
            prop_assert!((l - c * c / 2.0).abs() < 1e-6);
        }

        #[test]
        fn loss_is_nonnegative(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt = DepthMap::new(Grid::from_fn(4, 4, |_, _| rng.random_range(1.0..100.0))).unwrap();
            let pred = field((0..16).map(|_| rng.random_range(-2.0..6.0)).collect(), 4, 4);
            prop_assert!(scale_invariant_loss(&pred, &gt).unwrap() >= 0.0);
        }
    }

    /// Analytic gradient vs central differences (step 1e-4) at 20 random pixels.
    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let gt: Vec<f64> = (0..16).map(|_| rng.random_range(5.0..100.0)).collect();
            let pred: Vec<f64> = (0..16).map(|_| rng.random_range(1.0..5.0)).collect();
            let i = rng.random_range(0..16);
            let pred32: Vec<f32> = pred.iter().map(|v| *v as f32).collect();
            let gt_log32: Vec<f32> = gt.iter().map(|v| v.ln() as f32).collect();
            let mut grad = vec![0.0f32; 16];
            sc_inv_with_grad(&pred32, &gt_log32, &mut grad);
            // Oracle in f64 on the same (f32-rounded) inputs.
            let p64: Vec<f64> = pred32.iter().map(|v| f64::from(*v)).collect();
            let g64: Vec<f64> = gt_log32.iter().map(|v| f64::from(*v).exp()).collect();
            let h = 1e-4;
            let mut up = p64.clone();
            up[i] += h;
            let mut down = p64.clone();
            down[i] -= h;
            let fd = (sc_inv_from_logs(&up, &g64) - sc_inv_from_logs(&down, &g64)) / (2.0 * h);
            let an = f64::from(grad[i]);
            assert!((an - fd).abs() <= 1e-3 * fd.abs().max(1e-8), "{an} vs {fd}");
        }
    }
}
