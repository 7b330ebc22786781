//! Training objective: per-pixel binary cross-entropy between predicted and
//! target maps, summed over pixels, with one term per decoder branch plus a
//! term for the fused map.
//!
//! Branch terms are averaged (so the branch count does not change the scale
//! of the objective) and added to the fusion term. With deep supervision
//! off, the branch terms and their gradients are dropped entirely; the
//! branches then learn only through the fusion.

use crate::network::ForwardTrace;
use crate::tensor::Tensor4;
use crate::{Error, Result};

/// Predictions are clamped to `[EPS, 1 - EPS]` inside the logs so saturated
/// pixels yield large finite losses instead of infinities.
pub const EPS: f64 = 1e-7;

/// Pixel-summed binary cross-entropy of a predicted map against a target in
/// `[0, 1]`, plus its gradient with respect to the prediction.
///
/// The gradient is `(p - g) / (p (1 - p))` with the clamped `p`; it stays
/// finite and keeps pointing the right way even at saturation.
pub fn cross_entropy(pred: &Tensor4, target: &Tensor4) -> Result<(f64, Tensor4)> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {} and target {} differ",
            pred.shape(),
            target.shape()
        )));
    }
    if let Some(bad) = target.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Data(format!(
            "target map value {bad} outside [0, 1]"
        )));
    }
    let mut loss = 0.0;
    let mut grad = Tensor4::zeros(pred.shape());
    for (i, (&p, &g)) in pred.data().iter().zip(target.data()).enumerate() {
        let pc = p.clamp(EPS, 1.0 - EPS);
        loss -= g * pc.ln() + (1.0 - g) * (1.0 - pc).ln();
        grad.data_mut()[i] = (pc - g) / (pc * (1.0 - pc));
    }
    if !loss.is_finite() {
        return Err(Error::Numeric("cross-entropy loss is not finite".into()));
    }
    Ok((loss, grad))
}

/// The three views of one training loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    /// Per-branch cross-entropy (zeros when deep supervision is off).
    pub branch: Vec<f64>,
    /// Cross-entropy of the fused map.
    pub fusion: f64,
    /// `mean(branch) + fusion`; the quantity actually optimized.
    pub combined: f64,
}

impl LossBreakdown {
    pub fn zeros(branches: usize) -> Self {
        LossBreakdown {
            branch: vec![0.0; branches],
            fusion: 0.0,
            combined: 0.0,
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &LossBreakdown, scale: f64) {
        for (a, b) in self.branch.iter_mut().zip(&other.branch) {
            *a += scale * b;
        }
        self.fusion += scale * other.fusion;
        self.combined += scale * other.combined;
    }
}

/// Evaluates the full objective on one forward trace and returns the
/// breakdown together with the gradients [`crate::network::backward`]
/// expects: one per branch map and one for the fused map.
pub fn combined_objective(
    trace: &ForwardTrace,
    target: &Tensor4,
    deep_supervision: bool,
) -> Result<(LossBreakdown, Vec<Tensor4>, Tensor4)> {
    let m = trace.branch_maps.len();
    if m == 0 {
        return Err(Error::Shape("trace has no branch maps".into()));
    }
    let mut branch = vec![0.0; m];
    let mut d_branch = Vec::with_capacity(m);
    for (i, map) in trace.branch_maps.iter().enumerate() {
        if deep_supervision {
            let (l, mut g) = cross_entropy(map, target)?;
            branch[i] = l;
            // Each branch term enters the combined loss with weight 1/M.
            for v in g.data_mut() {
                *v /= m as f64;
            }
            d_branch.push(g);
        } else {
            d_branch.push(Tensor4::zeros(map.shape()));
        }
    }
    let (fusion, d_fused) = cross_entropy(&trace.fused_map, target)?;
    let combined = branch.iter().sum::<f64>() / m as f64 + fusion;
    Ok((
        LossBreakdown {
            branch,
            fusion,
            combined,
        },
        d_branch,
        d_fused,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build, forward, FusionMode, NetworkSpec};
    use crate::rng::Rng;
    use crate::tensor::Shape4;
    use approx::assert_relative_eq;

    fn map(values: &[f64], h: usize, w: usize) -> Tensor4 {
        Tensor4::new(Shape4::new(1, 1, h, w), values.to_vec()).unwrap()
    }

    #[test]
    fn matches_hand_computed_values() {
        // Single pixel, p = 0.6, g = 1: loss -ln 0.6, grad (0.6-1)/(0.6*0.4).
        let (l, g) = cross_entropy(&map(&[0.6], 1, 1), &map(&[1.0], 1, 1)).unwrap();
        assert_relative_eq!(l, -(0.6f64.ln()), epsilon = 1e-12);
        assert_relative_eq!(g.data()[0], -0.4 / 0.24, epsilon = 1e-12);

        // Uniform 0.5 against a half-on target: every pixel contributes
        // -ln 0.5 whichever side it is on, and the loss sums over pixels.
        let (l, _) = cross_entropy(
            &map(&[0.5, 0.5, 0.5, 0.5], 2, 2),
            &map(&[1.0, 0.0, 1.0, 0.0], 2, 2),
        )
        .unwrap();
        assert_relative_eq!(l, 4.0 * (2.0f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn saturated_predictions_stay_finite() {
        let (l, g) = cross_entropy(&map(&[0.0], 1, 1), &map(&[1.0], 1, 1)).unwrap();
        assert_relative_eq!(l, -(EPS.ln()), epsilon = 1e-9);
        assert!(l.is_finite() && g.data()[0].is_finite());
        assert!(g.data()[0] < 0.0, "still pushes the prediction up");

        let (l, _) = cross_entropy(&map(&[0.0], 1, 1), &map(&[0.0], 1, 1)).unwrap();
        assert!(l.is_finite() && l.abs() < 1e-6, "near-perfect, near-zero");
    }

    #[test]
    fn perfect_prediction_has_negligible_loss() {
        let p = map(&[1.0, 0.0, 1.0, 0.0], 2, 2);
        let (l, _) = cross_entropy(&p, &p).unwrap();
        assert!(l < 1e-5, "{l}");
    }

    #[test]
    fn rejects_mismatched_or_invalid_targets() {
        assert!(cross_entropy(&map(&[0.5], 1, 1), &map(&[0.5, 0.5], 1, 2)).is_err());
        assert!(cross_entropy(&map(&[0.5], 1, 1), &map(&[1.5], 1, 1)).is_err());
        assert!(cross_entropy(&map(&[0.5], 1, 1), &map(&[-0.1], 1, 1)).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(5);
        let shape = Shape4::new(1, 1, 3, 4);
        let pred = Tensor4::gaussian(shape, 0.0, 1.0, &mut rng).map_unary(|v| {
            // Squash into the open interval so the clamp stays inactive.
            1.0 / (1.0 + (-v).exp())
        });
        let target = Tensor4::gaussian(shape, 0.0, 1.0, &mut rng)
            .map_unary(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let (_, grad) = cross_entropy(&pred, &target).unwrap();
        let h = 1e-6;
        for i in 0..shape.count() {
            let mut plus = pred.clone();
            plus.data_mut()[i] += h;
            let mut minus = pred.clone();
            minus.data_mut()[i] -= h;
            let numeric = (cross_entropy(&plus, &target).unwrap().0
                - cross_entropy(&minus, &target).unwrap().0)
                / (2.0 * h);
            assert_relative_eq!(grad.data()[i], numeric, max_relative = 1e-6);
        }
    }

    fn tiny_trace(fusion: FusionMode, seed: u64) -> (crate::network::ForwardTrace, Tensor4) {
        let mut spec = NetworkSpec::tiny();
        spec.fusion = fusion;
        let state = build(&spec, seed, None).unwrap();
        let image = Tensor4::gaussian(Shape4::new(1, 3, 16, 16), 0.0, 1.0, &mut Rng::new(seed));
        let trace = forward(&state, &image).unwrap();
        let target = Tensor4::gaussian(Shape4::new(1, 1, 16, 16), 0.0, 1.0, &mut Rng::new(99))
            .map_unary(|v| 1.0 / (1.0 + (-v).exp()));
        (trace, target)
    }

    #[test]
    fn combined_equals_mean_branch_plus_fusion() {
        let (trace, target) = tiny_trace(FusionMode::LearnedSigmoid, 3);
        let (loss, d_branch, _) = combined_objective(&trace, &target, true).unwrap();
        let mean = loss.branch.iter().sum::<f64>() / loss.branch.len() as f64;
        assert!((loss.combined - (mean + loss.fusion)).abs() < 1e-12);
        assert_eq!(d_branch.len(), 3);
        assert!(loss.branch.iter().all(|&l| l > 0.0));
    }

    #[test]
    fn branch_gradients_carry_the_mean_weight() {
        let (trace, target) = tiny_trace(FusionMode::LearnedSigmoid, 4);
        let (_, d_branch, _) = combined_objective(&trace, &target, true).unwrap();
        let (_, raw) = cross_entropy(&trace.branch_maps[1], &target).unwrap();
        for (a, b) in d_branch[1].data().iter().zip(raw.data()) {
            assert_relative_eq!(*a, b / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn disabling_deep_supervision_drops_branch_terms() {
        let (trace, target) = tiny_trace(FusionMode::LearnedSigmoid, 5);
        let (loss, d_branch, d_fused) = combined_objective(&trace, &target, false).unwrap();
        assert!(loss.branch.iter().all(|&l| l == 0.0));
        assert!(d_branch
            .iter()
            .all(|g| g.data().iter().all(|&v| v == 0.0)));
        assert_relative_eq!(loss.combined, loss.fusion, epsilon = 1e-15);
        assert!(d_fused.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn single_branch_average_fusion_doubles_the_loss() {
        let mut spec = NetworkSpec::tiny();
        spec.taps = vec!["conv3-3".into()];
        spec.decoder_channels = vec![vec![8, 4]];
        spec.fusion = FusionMode::Average;
        let state = build(&spec, 6, None).unwrap();
        let image = Tensor4::gaussian(Shape4::new(1, 3, 16, 16), 0.0, 1.0, &mut Rng::new(6));
        let trace = forward(&state, &image).unwrap();
        let target = Tensor4::gaussian(Shape4::new(1, 1, 16, 16), 0.0, 1.0, &mut Rng::new(7))
            .map_unary(|v| 1.0 / (1.0 + (-v).exp()));
        // Fused equals the lone branch, so combined = branch + fusion = 2x.
        let (loss, _, _) = combined_objective(&trace, &target, true).unwrap();
        let (single, _) = cross_entropy(&trace.branch_maps[0], &target).unwrap();
        assert_relative_eq!(loss.combined, 2.0 * single, epsilon = 1e-12);
    }

    #[test]
    fn breakdown_accumulation_matches_manual_mean() {
        let (trace, target) = tiny_trace(FusionMode::LearnedSigmoid, 8);
        let (a, _, _) = combined_objective(&trace, &target, true).unwrap();
        let mut acc = LossBreakdown::zeros(3);
        acc.add_scaled(&a, 0.5);
        acc.add_scaled(&a, 0.5);
        assert_relative_eq!(acc.combined, a.combined, epsilon = 1e-12);
        assert_relative_eq!(acc.branch[2], a.branch[2], epsilon = 1e-12);
    }
}
