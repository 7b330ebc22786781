//! Finite-difference audit of every analytic gradient path: individual
//! layers, the fusion parameters, the loss, and the assembled network.
//!
//! Each component builds a small random problem, computes analytic
//! gradients through the shipped backward code, and compares them against
//! central differences of the matching scalar loss. Errors are measured
//! against the dominant gradient magnitude, so near-zero entries are judged
//! on the component's scale instead of drowning in rounding noise. The
//! perturbation hook multiplies a chosen component's analytic gradients,
//! which must push its error over the threshold; that proves the audit can
//! actually fail.

use crate::layers::{
    conv_backward, conv_forward, deconv_backward, deconv_forward, maxpool_backward,
    maxpool_forward, relu, relu_backward, sigmoid, sigmoid_backward, ConvParams, DeconvInit,
    DeconvParams,
};
use crate::network::{backward, build, forward, FusionMode, NetworkSpec, NetworkState,
    UpsamplingMode};
use crate::objective::{combined_objective, cross_entropy};
use crate::rng::Rng;
use crate::tensor::{Shape4, Tensor4};
use crate::{Error, Result};

/// A component passes when its worst error stays below this.
pub const THRESHOLD: f64 = 1e-4;

/// Checkable components in reporting order.
pub const COMPONENTS: [&str; 8] = [
    "conv", "deconv", "pool", "relu", "sigmoid", "fusion", "losses", "network",
];

const EPS_LAYER: f64 = 1e-6;
const EPS_NET: f64 = 1e-6;

/// Outcome for one component.
#[derive(Debug, Clone)]
pub struct ComponentReport {
    pub name: &'static str,
    pub max_err: f64,
}

impl ComponentReport {
    pub fn passed(&self) -> bool {
        self.max_err < THRESHOLD
    }
}

fn randn(shape: Shape4, stddev: f64, rng: &mut Rng) -> Tensor4 {
    let mut t = Tensor4::zeros(shape);
    for v in t.data_mut() {
        *v = rng.normal(0.0, stddev);
    }
    t
}

fn rand_range(shape: Shape4, lo: f64, hi: f64, rng: &mut Rng) -> Tensor4 {
    let mut t = Tensor4::zeros(shape);
    for v in t.data_mut() {
        *v = lo + (hi - lo) * rng.next_f64();
    }
    t
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central differences for coordinates `0..count`; `poke(i, delta)` must
/// evaluate the loss with coordinate `i` offset by `delta`.
fn numeric_grad(
    count: usize,
    eps: f64,
    mut poke: impl FnMut(usize, f64) -> Result<f64>,
) -> Result<Vec<f64>> {
    (0..count)
        .map(|i| {
            let fp = poke(i, eps)?;
            let fm = poke(i, -eps)?;
            Ok((fp - fm) / (2.0 * eps))
        })
        .collect()
}

/// Worst discrepancy relative to the dominant gradient magnitude.
fn max_scaled_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(1e-6_f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / scale)
        .fold(0.0, f64::max)
}

type Pairs = (Vec<f64>, Vec<f64>);

fn conv_pairs(rng: &mut Rng) -> Result<Pairs> {
    let x = randn(Shape4::new(1, 2, 5, 6), 1.0, rng);
    let p = ConvParams::new(
        randn(Shape4::new(3, 2, 3, 3), 0.5, rng),
        (0..3).map(|_| rng.normal(0.0, 0.5)).collect(),
        1,
        1,
    )?;
    let r = randn(conv_forward(&x, &p)?.shape(), 1.0, rng);
    let loss = |x: &Tensor4, p: &ConvParams| -> Result<f64> {
        Ok(dot(conv_forward(x, p)?.data(), r.data()))
    };

    let (d_x, g) = conv_backward(&x, &p, &r)?;
    let mut analytic = d_x.data().to_vec();
    analytic.extend_from_slice(g.d_weights.data());
    analytic.extend_from_slice(&g.d_bias);

    let mut numeric = numeric_grad(x.data().len(), EPS_LAYER, |i, d| {
        let mut xm = x.clone();
        xm.data_mut()[i] += d;
        loss(&xm, &p)
    })?;
    numeric.extend(numeric_grad(p.weights.data().len(), EPS_LAYER, |i, d| {
        let mut pm = p.clone();
        pm.weights.data_mut()[i] += d;
        loss(&x, &pm)
    })?);
    numeric.extend(numeric_grad(p.bias.len(), EPS_LAYER, |i, d| {
        let mut pm = p.clone();
        pm.bias[i] += d;
        loss(&x, &pm)
    })?);
    Ok((analytic, numeric))
}

fn deconv_pairs(rng: &mut Rng) -> Result<Pairs> {
    let x = randn(Shape4::new(1, 3, 4, 4), 1.0, rng);
    let p = DeconvParams::new(
        randn(Shape4::new(3, 2, 4, 4), 0.3, rng),
        (0..2).map(|_| rng.normal(0.0, 0.3)).collect(),
        2,
        1,
    )?;
    let r = randn(deconv_forward(&x, &p)?.shape(), 1.0, rng);
    let loss = |x: &Tensor4, p: &DeconvParams| -> Result<f64> {
        Ok(dot(deconv_forward(x, p)?.data(), r.data()))
    };

    let (d_x, g) = deconv_backward(&x, &p, &r)?;
    let mut analytic = d_x.data().to_vec();
    analytic.extend_from_slice(g.d_weights.data());
    analytic.extend_from_slice(&g.d_bias);

    let mut numeric = numeric_grad(x.data().len(), EPS_LAYER, |i, d| {
        let mut xm = x.clone();
        xm.data_mut()[i] += d;
        loss(&xm, &p)
    })?;
    numeric.extend(numeric_grad(p.weights.data().len(), EPS_LAYER, |i, d| {
        let mut pm = p.clone();
        pm.weights.data_mut()[i] += d;
        loss(&x, &pm)
    })?);
    numeric.extend(numeric_grad(p.bias.len(), EPS_LAYER, |i, d| {
        let mut pm = p.clone();
        pm.bias[i] += d;
        loss(&x, &pm)
    })?);
    Ok((analytic, numeric))
}

fn pool_pairs(rng: &mut Rng) -> Result<Pairs> {
    let x = randn(Shape4::new(1, 2, 6, 6), 1.0, rng);
    let (y, argmax) = maxpool_forward(&x)?;
    let r = randn(y.shape(), 1.0, rng);
    let analytic = maxpool_backward(&argmax, &r, x.shape())?.data().to_vec();
    let numeric = numeric_grad(x.data().len(), EPS_LAYER, |i, d| {
        let mut xm = x.clone();
        xm.data_mut()[i] += d;
        let (ym, _) = maxpool_forward(&xm)?;
        Ok(dot(ym.data(), r.data()))
    })?;
    Ok((analytic, numeric))
}

fn relu_pairs(rng: &mut Rng) -> Result<Pairs> {
    let x = randn(Shape4::new(1, 2, 4, 5), 1.0, rng);
    let r = randn(x.shape(), 1.0, rng);
    let analytic = relu_backward(&x, &r)?.data().to_vec();
    let numeric = numeric_grad(x.data().len(), EPS_LAYER, |i, d| {
        let mut xm = x.clone();
        xm.data_mut()[i] += d;
        Ok(dot(relu(&xm).data(), r.data()))
    })?;
    Ok((analytic, numeric))
}

fn sigmoid_pairs(rng: &mut Rng) -> Result<Pairs> {
    let x = randn(Shape4::new(1, 2, 4, 5), 1.5, rng);
    let r = randn(x.shape(), 1.0, rng);
    let y = sigmoid(&x);
    let analytic = sigmoid_backward(&y, &r)?.data().to_vec();
    let numeric = numeric_grad(x.data().len(), EPS_LAYER, |i, d| {
        let mut xm = x.clone();
        xm.data_mut()[i] += d;
        Ok(dot(sigmoid(&xm).data(), r.data()))
    })?;
    Ok((analytic, numeric))
}

fn losses_pairs(rng: &mut Rng) -> Result<Pairs> {
    let pred = rand_range(Shape4::new(1, 1, 4, 5), 0.2, 0.8, rng);
    let target = rand_range(Shape4::new(1, 1, 4, 5), 0.05, 0.95, rng);
    let (_, grad) = cross_entropy(&pred, &target)?;
    let analytic = grad.data().to_vec();
    let numeric = numeric_grad(pred.data().len(), EPS_LAYER, |i, d| {
        let mut pm = pred.clone();
        pm.data_mut()[i] += d;
        Ok(cross_entropy(&pm, &target)?.0)
    })?;
    Ok((analytic, numeric))
}

fn audit_spec(fusion: FusionMode) -> NetworkSpec {
    NetworkSpec {
        in_channels: 3,
        input_dims: (8, 8),
        encoder_blocks: vec![(2, 4), (2, 8)],
        taps: vec!["conv2-2".into()],
        decoder_channels: vec![vec![4]],
        deconv_kernel: 4,
        deconv_init: DeconvInit::Bilinear,
        upsampling: UpsamplingMode::Learned,
        fusion,
        deep_supervision: true,
    }
}

fn combined_loss(state: &NetworkState, image: &Tensor4, target: &Tensor4) -> Result<f64> {
    let trace = forward(state, image)?;
    Ok(combined_objective(&trace, target, state.spec.deep_supervision)?
        .0
        .combined)
}

fn fusion_pairs(rng: &mut Rng) -> Result<Pairs> {
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for mode in [FusionMode::LearnedSigmoid, FusionMode::LearnedLinear] {
        let spec = audit_spec(mode);
        let state = build(&spec, rng.next_u64(), None)?;
        let image = randn(Shape4::new(1, 3, 8, 8), 0.8, rng);
        let target = rand_range(Shape4::new(1, 1, 8, 8), 0.05, 0.95, rng);

        let trace = forward(&state, &image)?;
        let (_, d_branch, d_fused) =
            combined_objective(&trace, &target, spec.deep_supervision)?;
        let grads = backward(&state, &trace, &d_branch, &d_fused)?;
        analytic.extend_from_slice(&grads.fusion);

        numeric.extend(numeric_grad(state.fusion_weights.len(), EPS_NET, |i, d| {
            let mut sm = state.clone();
            sm.fusion_weights[i] += d;
            combined_loss(&sm, &image, &target)
        })?);
    }
    Ok((analytic, numeric))
}

/// Mutable access to one scalar parameter of a (cloned) network state.
type ParamSlot = Box<dyn Fn(&mut NetworkState) -> &mut f64>;

fn network_pairs(rng: &mut Rng) -> Result<Pairs> {
    // The whole tiny profile at its smallest legal resolution. Every encoder
    // conv, every deconv stage, every classifier and the fusion weights
    // contribute audited coordinates.
    let mut spec = NetworkSpec::tiny();
    spec.input_dims = (32, 32);
    let mut state = build(&spec, rng.next_u64(), None)?;
    // The audit needs activations well clear of the rectifier kinks: at the
    // shipped init the deep taps decay below 1e-9, closer to zero than any
    // workable difference step, and central differences silently halve. He
    // sized weights and spread biases keep every layer O(1); signed decoder
    // kernels also make the decoder rectifiers actually mask something.
    for p in &mut state.encoder {
        let ws = p.weights.shape();
        let std = (2.0 / (ws.c * ws.h * ws.w) as f64).sqrt();
        for v in p.weights.data_mut() {
            *v = rng.normal(0.0, std);
        }
        for b in &mut p.bias {
            *b = rng.normal(0.0, 0.05);
        }
    }
    for branch in &mut state.decoders {
        for p in branch {
            let ws = p.weights.shape();
            // A stride-2 deconv feeds each output from k^2/4 taps per channel.
            let std = (2.0 / (ws.n * ws.h * ws.w / 4) as f64).sqrt();
            for v in p.weights.data_mut() {
                *v = rng.normal(0.0, std);
            }
            for b in &mut p.bias {
                *b = rng.normal(0.0, 0.05);
            }
        }
    }
    for p in &mut state.classifiers {
        let ws = p.weights.shape();
        let std = (1.0 / ws.c as f64).sqrt();
        for v in p.weights.data_mut() {
            *v = rng.normal(0.0, std);
        }
        for b in &mut p.bias {
            *b = rng.normal(0.0, 0.1);
        }
    }
    let (h, w) = spec.input_dims;
    let image = randn(Shape4::new(1, 3, h, w), 0.8, rng);
    let target = rand_range(Shape4::new(1, 1, h, w), 0.05, 0.95, rng);

    let trace = forward(&state, &image)?;
    let (_, d_branch, d_fused) = combined_objective(&trace, &target, spec.deep_supervision)?;
    let grads = backward(&state, &trace, &d_branch, &d_fused)?;

    let mut slots: Vec<(ParamSlot, f64)> = Vec::new();
    for i in 0..state.fusion_weights.len() {
        slots.push((Box::new(move |s| &mut s.fusion_weights[i]), grads.fusion[i]));
    }
    for c in 0..state.classifiers.len() {
        for i in 0..state.classifiers[c].weights.data().len() {
            slots.push((
                Box::new(move |s| &mut s.classifiers[c].weights.data_mut()[i]),
                grads.classifiers[c].d_weights.data()[i],
            ));
        }
        slots.push((
            Box::new(move |s| &mut s.classifiers[c].bias[0]),
            grads.classifiers[c].d_bias[0],
        ));
    }
    for b in 0..state.decoders.len() {
        for stage in 0..state.decoders[b].len() {
            let wlen = state.decoders[b][stage].weights.data().len();
            for _ in 0..4 {
                let i = rng.next_below(wlen);
                slots.push((
                    Box::new(move |s| &mut s.decoders[b][stage].weights.data_mut()[i]),
                    grads.decoders[b][stage].d_weights.data()[i],
                ));
            }
            let bi = rng.next_below(state.decoders[b][stage].bias.len());
            slots.push((
                Box::new(move |s| &mut s.decoders[b][stage].bias[bi]),
                grads.decoders[b][stage].d_bias[bi],
            ));
        }
    }
    for li in 0..state.encoder.len() {
        let len = state.encoder[li].weights.data().len();
        for _ in 0..4 {
            let i = rng.next_below(len);
            slots.push((
                Box::new(move |s| &mut s.encoder[li].weights.data_mut()[i]),
                grads.encoder[li].d_weights.data()[i],
            ));
        }
        let bi = rng.next_below(state.encoder[li].bias.len());
        slots.push((
            Box::new(move |s| &mut s.encoder[li].bias[bi]),
            grads.encoder[li].d_bias[bi],
        ));
    }

    let analytic: Vec<f64> = slots.iter().map(|(_, a)| *a).collect();
    let numeric = numeric_grad(slots.len(), EPS_NET, |i, d| {
        let mut sm = state.clone();
        *(slots[i].0)(&mut sm) += d;
        combined_loss(&sm, &image, &target)
    })?;
    Ok((analytic, numeric))
}

/// Runs one component. `grad_scale` multiplies the analytic side and exists
/// for fault injection; 1.0 is the honest check.
pub fn check_component(name: &str, seed: u64, grad_scale: f64) -> Result<ComponentReport> {
    let canonical = COMPONENTS
        .iter()
        .find(|c| **c == name)
        .copied()
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown gradcheck component {name:?} (expected one of {})",
                COMPONENTS.join(", ")
            ))
        })?;
    let mut rng = Rng::new(seed);
    let (mut analytic, numeric) = match canonical {
        "conv" => conv_pairs(&mut rng)?,
        "deconv" => deconv_pairs(&mut rng)?,
        "pool" => pool_pairs(&mut rng)?,
        "relu" => relu_pairs(&mut rng)?,
        "sigmoid" => sigmoid_pairs(&mut rng)?,
        "fusion" => fusion_pairs(&mut rng)?,
        "losses" => losses_pairs(&mut rng)?,
        "network" => network_pairs(&mut rng)?,
        _ => unreachable!(),
    };
    for a in &mut analytic {
        *a *= grad_scale;
    }
    Ok(ComponentReport {
        name: canonical,
        max_err: max_scaled_error(&analytic, &numeric),
    })
}

/// Runs every component in order. `perturb` scales the analytic gradients
/// of the named component, which should make exactly that report fail.
pub fn check_all(seed: u64, perturb: Option<(&str, f64)>) -> Result<Vec<ComponentReport>> {
    COMPONENTS
        .iter()
        .map(|name| {
            let scale = match perturb {
                Some((p, s)) if p == *name => s,
                _ => 1.0,
            };
            check_component(name, seed, scale)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_component_passes_the_audit() {
        let reports = check_all(4040, None).unwrap();
        let names: Vec<&str> = reports.iter().map(|r| r.name).collect();
        assert_eq!(names, COMPONENTS.to_vec());
        for r in &reports {
            assert!(
                r.passed(),
                "{} failed with max error {:.3e}",
                r.name,
                r.max_err
            );
        }
    }

    #[test]
    fn planted_gradient_faults_are_caught_in_every_component() {
        for name in COMPONENTS {
            let report = check_component(name, 4040, 1.01).unwrap();
            assert!(
                !report.passed(),
                "{name} did not notice a 1% gradient fault (err {:.3e})",
                report.max_err
            );
        }
    }

    #[test]
    fn perturbing_one_component_leaves_the_others_green() {
        let reports = check_all(4040, Some(("pool", 1.01))).unwrap();
        for r in &reports {
            assert_eq!(
                r.passed(),
                r.name != "pool",
                "{} with err {:.3e}",
                r.name,
                r.max_err
            );
        }
    }

    #[test]
    fn unknown_component_names_are_rejected() {
        let err = check_component("dropout", 1, 1.0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("conv"));
    }

    #[test]
    fn audit_is_deterministic_for_a_seed() {
        let a = check_component("network", 77, 1.0).unwrap();
        let b = check_component("network", 77, 1.0).unwrap();
        assert_eq!(a.max_err.to_bits(), b.max_err.to_bits());
    }

    #[test]
    fn threshold_is_a_strict_upper_bound() {
        let at = ComponentReport {
            name: "conv",
            max_err: THRESHOLD,
        };
        assert!(!at.passed());
        let below = ComponentReport {
            name: "conv",
            max_err: THRESHOLD * 0.99,
        };
        assert!(below.passed());
    }
}
