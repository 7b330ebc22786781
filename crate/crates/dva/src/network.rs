//! The saliency network: a VGG-style encoder feeding multiple decoder
//! branches that are fused into one map.
//!
//! The encoder is a stack of 3x3 convolution blocks separated by 2x2 max
//! pools (no pool after the last block). Selected encoder layers are tapped;
//! each tap feeds a decoder branch that upsamples back to input resolution
//! with stride-2 transposed convolutions (one per pooling stage crossed) and
//! ends in a 1x1 classifier with a sigmoid. Branch maps are combined by a
//! learned pixelwise weighting (default), a plain average, or the clamped
//! linear variant. Because every layer is convolutional, one built network
//! runs at any input size whose sides divide by the total pooling factor.
//!
//! A [`ForwardTrace`] retains only what backward cannot cheaply recompute:
//! the input, the tap activations, pooling argmaxes and the output maps.
//! Everything else is recomputed during [`backward`], trading a second
//! forward pass for a flat memory profile.

use std::path::Path;

use crate::layers::{
    bilinear_upsample_params, conv_backward, conv_forward, deconv_backward, deconv_forward,
    init_deconv_weights, maxpool_backward, maxpool_forward, relu, relu_backward, sigmoid,
    sigmoid_backward, ConvParams, DeconvInit, DeconvParams, LayerGrads,
};
use crate::rng::Rng;
use crate::tensor::{Shape4, Tensor4};
use crate::{Error, Result};

/// How branch maps are combined into the fused map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// `sigmoid(bias + sum_m w_m * S_m)`: a learned 1x1 combination wrapped
    /// in a sigmoid so the result is a probability regardless of weights.
    LearnedSigmoid,
    /// `clamp(bias + sum_m w_m * S_m, 0, 1)`: the unwrapped combination kept
    /// for ablation; the clamp preserves the output range contract.
    LearnedLinear,
    /// Plain mean of the branch maps; no fusion parameters are used.
    Average,
}

/// How each decoder branch reaches input resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsamplingMode {
    /// Learned stride-2 transposed convolutions (default).
    Learned,
    /// Classify at tap resolution, then upsample the sigmoid output with a
    /// fixed bilinear kernel in one step (ablation variant).
    FixedBilinear,
}

/// Architecture description; [`build`] turns it into parameters.
#[derive(Debug, Clone)]
pub struct NetworkSpec {
    pub in_channels: usize,
    /// Nominal input size `(h, w)`; both must divide by the pooling factor.
    pub input_dims: (usize, usize),
    /// Encoder blocks as `(conv_count, out_channels)`; a 2x2 pool follows
    /// every block except the last.
    pub encoder_blocks: Vec<(usize, usize)>,
    /// Names of tapped encoder layers, e.g. `"conv3-3"` for the third conv
    /// of the third block.
    pub taps: Vec<String>,
    /// Learned-mode channel chain per branch: output channels after each
    /// transposed convolution. Chain length must equal the number of pools
    /// in front of the tap.
    pub decoder_channels: Vec<Vec<usize>>,
    /// Transposed-convolution kernel size; even, stride is fixed at 2 and
    /// padding at `(k - 2) / 2` so each stage exactly doubles.
    pub deconv_kernel: usize,
    pub deconv_init: DeconvInit,
    pub upsampling: UpsamplingMode,
    pub fusion: FusionMode,
    /// When false the per-branch loss terms are dropped from the training
    /// objective (the branches only learn through the fusion).
    pub deep_supervision: bool,
}

impl NetworkSpec {
    /// Full-size profile: thirteen 3x3 conv layers in blocks of
    /// (2,64)(2,128)(3,256)(3,512)(3,512), tapped at conv3-3, conv4-3 and
    /// conv5-3.
    pub fn full() -> Self {
        NetworkSpec {
            in_channels: 3,
            input_dims: (256, 256),
            encoder_blocks: vec![(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)],
            taps: vec!["conv3-3".into(), "conv4-3".into(), "conv5-3".into()],
            decoder_channels: vec![
                vec![64, 32],
                vec![128, 64, 32],
                vec![256, 128, 64, 32],
            ],
            deconv_kernel: 4,
            deconv_init: DeconvInit::Bilinear,
            upsampling: UpsamplingMode::Learned,
            fusion: FusionMode::LearnedSigmoid,
            deep_supervision: true,
        }
    }

    /// Same topology with channels scaled down to [8,16,32,64,64]; small
    /// enough for exhaustive gradient checks and fast tests.
    pub fn tiny() -> Self {
        NetworkSpec {
            input_dims: (64, 64),
            encoder_blocks: vec![(2, 8), (2, 16), (3, 32), (3, 64), (3, 64)],
            decoder_channels: vec![vec![8, 4], vec![16, 8, 4], vec![32, 16, 8, 4]],
            ..NetworkSpec::full()
        }
    }

    /// Number of decoder branches.
    pub fn branches(&self) -> usize {
        self.taps.len()
    }

    /// Product of all pooling strides; input sides must divide by this.
    pub fn pool_factor(&self) -> usize {
        1 << (self.encoder_blocks.len().saturating_sub(1))
    }

    pub(crate) fn layout(&self) -> Result<EncoderLayout> {
        if self.in_channels == 0 {
            return Err(Error::Config("network needs at least one input channel".into()));
        }
        if self.encoder_blocks.is_empty() {
            return Err(Error::Config("encoder has no blocks".into()));
        }
        if self.taps.is_empty() {
            return Err(Error::Config("network needs at least one tap".into()));
        }
        if self.deconv_kernel < 2 || self.deconv_kernel % 2 != 0 {
            return Err(Error::Config(format!(
                "deconv kernel must be even and at least 2, got {}",
                self.deconv_kernel
            )));
        }
        let mut conv_in_out = Vec::new();
        let mut conv_names = Vec::new();
        let mut pool_after = Vec::new();
        let mut prev_c = self.in_channels;
        for (b, &(count, channels)) in self.encoder_blocks.iter().enumerate() {
            if count == 0 || channels == 0 {
                return Err(Error::Config(format!(
                    "encoder block {} has zero convs or channels",
                    b + 1
                )));
            }
            for i in 0..count {
                conv_in_out.push((prev_c, channels));
                conv_names.push(format!("conv{}-{}", b + 1, i + 1));
                pool_after.push(i == count - 1 && b + 1 < self.encoder_blocks.len());
                prev_c = channels;
            }
        }
        let mut tap_conv = Vec::new();
        let mut tap_depth = Vec::new();
        let mut tap_channels = Vec::new();
        for name in &self.taps {
            let idx = conv_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Config(format!("tap {name} is not an encoder layer")))?;
            if tap_conv.contains(&idx) {
                return Err(Error::Config(format!("tap {name} listed twice")));
            }
            let depth = pool_after[..idx].iter().filter(|&&p| p).count();
            tap_conv.push(idx);
            tap_depth.push(depth);
            tap_channels.push(conv_in_out[idx].1);
        }
        if self.upsampling == UpsamplingMode::Learned {
            if self.decoder_channels.len() != self.taps.len() {
                return Err(Error::Config(format!(
                    "{} decoder chains for {} taps",
                    self.decoder_channels.len(),
                    self.taps.len()
                )));
            }
            for (m, chain) in self.decoder_channels.iter().enumerate() {
                if chain.len() != tap_depth[m] {
                    return Err(Error::Config(format!(
                        "branch {} ({}): tap sits behind {} pools but the decoder chain has {} stages",
                        m + 1,
                        self.taps[m],
                        tap_depth[m],
                        chain.len()
                    )));
                }
                if chain.iter().any(|&c| c == 0) {
                    return Err(Error::Config(format!(
                        "branch {} has a zero-channel decoder stage",
                        m + 1
                    )));
                }
                if tap_depth[m] == 0 {
                    return Err(Error::Config(format!(
                        "tap {} is at input resolution; nothing to upsample",
                        self.taps[m]
                    )));
                }
            }
        } else {
            for (m, &d) in tap_depth.iter().enumerate() {
                if d == 0 {
                    return Err(Error::Config(format!(
                        "tap {} is at input resolution; nothing to upsample",
                        self.taps[m]
                    )));
                }
            }
        }
        Ok(EncoderLayout {
            conv_in_out,
            conv_names,
            pool_after,
            tap_conv,
            tap_depth,
            tap_channels,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let layout = self.layout()?;
        let f = self.pool_factor();
        let (h, w) = self.input_dims;
        if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            return Err(Error::Config(format!(
                "input dims {h}x{w} must be positive multiples of the pooling factor {f}"
            )));
        }
        let _ = layout;
        Ok(())
    }
}

/// Flattened encoder structure derived from a spec.
pub(crate) struct EncoderLayout {
    /// `(in_channels, out_channels)` per conv layer.
    pub conv_in_out: Vec<(usize, usize)>,
    pub conv_names: Vec<String>,
    /// Whether a pool follows the layer.
    pub pool_after: Vec<bool>,
    /// Conv index of each tap, in branch order.
    pub tap_conv: Vec<usize>,
    /// Pools in front of each tap (so the branch upsamples by `2^depth`).
    pub tap_depth: Vec<usize>,
    pub tap_channels: Vec<usize>,
}

/// All learnable parameters plus the spec they were built for.
#[derive(Debug, Clone)]
pub struct NetworkState {
    pub spec: NetworkSpec,
    pub encoder: Vec<ConvParams>,
    /// Per branch, the transposed-convolution stack (empty in fixed-bilinear
    /// mode).
    pub decoders: Vec<Vec<DeconvParams>>,
    /// Per branch, the 1x1 classifier.
    pub classifiers: Vec<ConvParams>,
    /// Branch weights followed by the bias, `branches() + 1` values.
    pub fusion_weights: Vec<f64>,
}

/// Gradients (or any same-shaped quantity, e.g. optimizer velocity) mirroring
/// [`NetworkState`].
#[derive(Debug, Clone)]
pub struct NetworkGrads {
    pub encoder: Vec<LayerGrads>,
    pub decoders: Vec<Vec<LayerGrads>>,
    pub classifiers: Vec<LayerGrads>,
    pub fusion: Vec<f64>,
}

impl NetworkGrads {
    pub fn zeros_like(state: &NetworkState) -> Self {
        let zero = |p: &ConvParams| LayerGrads {
            d_weights: Tensor4::zeros(p.weights.shape()),
            d_bias: vec![0.0; p.bias.len()],
        };
        NetworkGrads {
            encoder: state.encoder.iter().map(zero).collect(),
            decoders: state
                .decoders
                .iter()
                .map(|branch| {
                    branch
                        .iter()
                        .map(|p| LayerGrads {
                            d_weights: Tensor4::zeros(p.weights.shape()),
                            d_bias: vec![0.0; p.bias.len()],
                        })
                        .collect()
                })
                .collect(),
            classifiers: state.classifiers.iter().map(zero).collect(),
            fusion: vec![0.0; state.fusion_weights.len()],
        }
    }

    /// `self += scale * other`; structures must match.
    pub fn add_scaled(&mut self, other: &NetworkGrads, scale: f64) -> Result<()> {
        let add = |a: &mut LayerGrads, b: &LayerGrads| -> Result<()> {
            a.d_weights.axpy(scale, &b.d_weights)?;
            for (x, y) in a.d_bias.iter_mut().zip(&b.d_bias) {
                *x += scale * y;
            }
            Ok(())
        };
        for (a, b) in self.encoder.iter_mut().zip(&other.encoder) {
            add(a, b)?;
        }
        for (da, db) in self.decoders.iter_mut().zip(&other.decoders) {
            for (a, b) in da.iter_mut().zip(db) {
                add(a, b)?;
            }
        }
        for (a, b) in self.classifiers.iter_mut().zip(&other.classifiers) {
            add(a, b)?;
        }
        for (x, y) in self.fusion.iter_mut().zip(&other.fusion) {
            *x += scale * y;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        let sc = |g: &mut LayerGrads| {
            for v in g.d_weights.data_mut() {
                *v *= s;
            }
            for v in g.d_bias.iter_mut() {
                *v *= s;
            }
        };
        self.encoder.iter_mut().for_each(sc);
        for branch in &mut self.decoders {
            branch.iter_mut().for_each(sc);
        }
        self.classifiers.iter_mut().for_each(sc);
        for v in &mut self.fusion {
            *v *= s;
        }
    }
}

/// Walks every parameter slice of `state` together with the matching slices
/// of a gradient and a velocity structure, in a fixed, documented order:
/// encoder layers (weights then bias), decoder branches in tap order, the
/// classifiers, then the fusion weights. The optimizer is built on this.
pub fn visit_params_mut(
    state: &mut NetworkState,
    grads: &NetworkGrads,
    velocity: &mut NetworkGrads,
    mut f: impl FnMut(&mut [f64], &[f64], &mut [f64]),
) {
    for ((p, g), v) in state
        .encoder
        .iter_mut()
        .zip(&grads.encoder)
        .zip(&mut velocity.encoder)
    {
        f(p.weights.data_mut(), g.d_weights.data(), v.d_weights.data_mut());
        f(&mut p.bias, &g.d_bias, &mut v.d_bias);
    }
    for ((branch, gb), vb) in state
        .decoders
        .iter_mut()
        .zip(&grads.decoders)
        .zip(&mut velocity.decoders)
    {
        for ((p, g), v) in branch.iter_mut().zip(gb).zip(vb.iter_mut()) {
            f(p.weights.data_mut(), g.d_weights.data(), v.d_weights.data_mut());
            f(&mut p.bias, &g.d_bias, &mut v.d_bias);
        }
    }
    for ((p, g), v) in state
        .classifiers
        .iter_mut()
        .zip(&grads.classifiers)
        .zip(&mut velocity.classifiers)
    {
        f(p.weights.data_mut(), g.d_weights.data(), v.d_weights.data_mut());
        f(&mut p.bias, &g.d_bias, &mut v.d_bias);
    }
    f(&mut state.fusion_weights, &grads.fusion, &mut velocity.fusion);
}

impl NetworkState {
    /// Total learnable parameter count.
    pub fn param_count(&self) -> usize {
        let conv = |p: &ConvParams| p.weights.shape().count() + p.bias.len();
        self.encoder.iter().map(conv).sum::<usize>()
            + self
                .decoders
                .iter()
                .flatten()
                .map(|p| p.weights.shape().count() + p.bias.len())
                .sum::<usize>()
            + self.classifiers.iter().map(conv).sum::<usize>()
            + self.fusion_weights.len()
    }

    /// Zero-initialized state for a spec; used as a shape template when
    /// loading weight files.
    pub(crate) fn zeros(spec: &NetworkSpec) -> Result<Self> {
        build_with_init(spec, &mut Rng::new(0), true)
    }
}

fn build_with_init(spec: &NetworkSpec, rng: &mut Rng, zeroed: bool) -> Result<NetworkState> {
    spec.validate()?;
    let layout = spec.layout()?;
    let gaussian = |shape: Shape4, rng: &mut Rng, zeroed: bool| {
        if zeroed {
            Tensor4::zeros(shape)
        } else {
            Tensor4::gaussian(shape, 0.0, 0.01, rng)
        }
    };

    let mut encoder = Vec::new();
    for &(ic, oc) in &layout.conv_in_out {
        let w = gaussian(Shape4::new(oc, ic, 3, 3), rng, zeroed);
        encoder.push(ConvParams::new(w, vec![0.0; oc], 1, 1)?);
    }

    let k = spec.deconv_kernel;
    let pad = (k - 2) / 2;
    let mut decoders = Vec::new();
    let mut classifiers = Vec::new();
    for (m, &tap_c) in layout.tap_channels.iter().enumerate() {
        let mut stack = Vec::new();
        let mut in_c = tap_c;
        if spec.upsampling == UpsamplingMode::Learned {
            for &out_c in &spec.decoder_channels[m] {
                let w = if zeroed {
                    Tensor4::zeros(Shape4::new(in_c, out_c, k, k))
                } else {
                    init_deconv_weights(in_c, out_c, k, spec.deconv_init, rng)
                };
                stack.push(DeconvParams::new(w, vec![0.0; out_c], 2, pad)?);
                in_c = out_c;
            }
        }
        decoders.push(stack);
        let w = gaussian(Shape4::new(1, in_c, 1, 1), rng, zeroed);
        classifiers.push(ConvParams::new(w, vec![0.0], 1, 0)?);
    }

    let m = spec.branches();
    let mut fusion_weights = vec![1.0 / m as f64; m];
    fusion_weights.push(0.0);

    Ok(NetworkState {
        spec: spec.clone(),
        encoder,
        decoders,
        classifiers,
        fusion_weights,
    })
}

/// Builds a network: encoder and classifier weights are Gaussian(0, 0.01)
/// from the seed (biases zero), decoder kernels follow the spec's init
/// policy, fusion starts as a plain average. When `pretrained` names a
/// weight file, its encoder entries replace the random encoder after a
/// shape check.
pub fn build(spec: &NetworkSpec, seed: u64, pretrained: Option<&Path>) -> Result<NetworkState> {
    let mut rng = Rng::new(seed);
    let mut state = build_with_init(spec, &mut rng, false)?;
    if let Some(path) = pretrained {
        crate::weights::load_encoder_weights(&mut state, path)?;
    }
    Ok(state)
}

/// Everything the backward pass needs that forward already computed: input,
/// tap activations, pool argmaxes and the output maps. Branch and fused maps
/// are `(1, 1, h, w)` tensors with values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Tensor4,
    pub taps: Vec<Tensor4>,
    pub pool_argmax: Vec<Vec<usize>>,
    pub branch_maps: Vec<Tensor4>,
    pub fused_map: Tensor4,
}

fn check_input(state: &NetworkState, image: &Tensor4) -> Result<()> {
    let s = image.shape();
    if s.n != 1 {
        return Err(Error::Shape(format!(
            "forward processes one image at a time, got batch of {}",
            s.n
        )));
    }
    if s.c != state.spec.in_channels {
        return Err(Error::Shape(format!(
            "network expects {} channels, image has {}",
            state.spec.in_channels, s.c
        )));
    }
    let f = state.spec.pool_factor();
    if s.h % f != 0 || s.w % f != 0 || s.h == 0 || s.w == 0 {
        return Err(Error::Shape(format!(
            "input dims {}x{} must be positive multiples of the pooling factor {f}",
            s.h, s.w
        )));
    }
    Ok(())
}

struct EncoderRun {
    /// Input of each conv layer (recomputation cache; `conv_inputs[0]` is
    /// the image).
    conv_inputs: Vec<Tensor4>,
    /// Post-rectifier output of each conv layer.
    post_relu: Vec<Tensor4>,
    pool_argmax: Vec<Vec<usize>>,
}

fn run_encoder(state: &NetworkState, image: &Tensor4, layout: &EncoderLayout) -> Result<EncoderRun> {
    let mut conv_inputs = Vec::with_capacity(state.encoder.len());
    let mut post_relu = Vec::with_capacity(state.encoder.len());
    let mut pool_argmax = Vec::new();
    let mut act = image.clone();
    for (i, conv) in state.encoder.iter().enumerate() {
        conv_inputs.push(act.clone());
        let z = conv_forward(&act, conv)?;
        let y = relu(&z);
        post_relu.push(y.clone());
        act = if layout.pool_after[i] {
            let (pooled, argmax) = maxpool_forward(&y)?;
            pool_argmax.push(argmax);
            pooled
        } else {
            y
        };
    }
    Ok(EncoderRun {
        conv_inputs,
        post_relu,
        pool_argmax,
    })
}

struct BranchRun {
    /// Input of each transposed convolution.
    deconv_inputs: Vec<Tensor4>,
    /// Post-rectifier output of each stage (classifier input is the last
    /// entry, or the tap itself when the stack is empty).
    post_relu: Vec<Tensor4>,
    /// Classifier sigmoid output at classifier resolution.
    low_map: Tensor4,
    /// Branch map at input resolution.
    map: Tensor4,
}

fn run_branch(state: &NetworkState, m: usize, tap: &Tensor4, depth: usize) -> Result<BranchRun> {
    let mut deconv_inputs = Vec::new();
    let mut post_relu = Vec::new();
    let mut act = tap.clone();
    for dec in &state.decoders[m] {
        deconv_inputs.push(act.clone());
        let z = deconv_forward(&act, dec)?;
        act = relu(&z);
        post_relu.push(act.clone());
    }
    let logits = conv_forward(&act, &state.classifiers[m])?;
    let low_map = sigmoid(&logits);
    let map = match state.spec.upsampling {
        UpsamplingMode::Learned => low_map.clone(),
        UpsamplingMode::FixedBilinear => {
            let up = bilinear_upsample_params(1 << depth);
            deconv_forward(&low_map, &up)?
        }
    };
    Ok(BranchRun {
        deconv_inputs,
        post_relu,
        low_map,
        map,
    })
}

fn fuse(state: &NetworkState, branch_maps: &[Tensor4]) -> Result<Tensor4> {
    let m = branch_maps.len();
    let shape = branch_maps[0].shape();
    match state.spec.fusion {
        FusionMode::Average => {
            let mut acc = Tensor4::zeros(shape);
            for map in branch_maps {
                acc.axpy(1.0 / m as f64, map)?;
            }
            Ok(acc)
        }
        FusionMode::LearnedSigmoid | FusionMode::LearnedLinear => {
            let bias = state.fusion_weights[m];
            let mut z = Tensor4::zeros(shape);
            z.data_mut().fill(bias);
            for (map, &w) in branch_maps.iter().zip(&state.fusion_weights[..m]) {
                z.axpy(w, map)?;
            }
            Ok(match state.spec.fusion {
                FusionMode::LearnedSigmoid => sigmoid(&z),
                _ => z.map_unary(|v| v.clamp(0.0, 1.0)),
            })
        }
    }
}

/// Runs the network on one `(1, c, h, w)` image and returns the trace with
/// all branch maps and the fused map at input resolution.
pub fn forward(state: &NetworkState, image: &Tensor4) -> Result<ForwardTrace> {
    check_input(state, image)?;
    let layout = state.spec.layout()?;
    let enc = run_encoder(state, image, &layout)?;
    let taps: Vec<Tensor4> = layout
        .tap_conv
        .iter()
        .map(|&ci| enc.post_relu[ci].clone())
        .collect();
    let mut branch_maps = Vec::new();
    for m in 0..state.spec.branches() {
        let run = run_branch(state, m, &taps[m], layout.tap_depth[m])?;
        let bs = run.map.shape();
        let is = image.shape();
        if (bs.h, bs.w) != (is.h, is.w) || bs.c != 1 {
            return Err(Error::Shape(format!(
                "branch {} produced {bs}, expected 1x1x{}x{}",
                m + 1,
                is.h,
                is.w
            )));
        }
        debug_assert!(
            run.map.data().iter().all(|&v| (0.0..=1.0).contains(&v)),
            "branch map out of [0,1]"
        );
        branch_maps.push(run.map);
    }
    let fused_map = fuse(state, &branch_maps)?;
    debug_assert!(fused_map.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    Ok(ForwardTrace {
        input: image.clone(),
        taps,
        pool_argmax: enc.pool_argmax,
        branch_maps,
        fused_map,
    })
}

fn check_trace(state: &NetworkState, trace: &ForwardTrace) -> Result<()> {
    let m = state.spec.branches();
    if trace.taps.len() != m || trace.branch_maps.len() != m {
        return Err(Error::Shape(format!(
            "stale trace: {} taps / {} branch maps for a {m}-branch network",
            trace.taps.len(),
            trace.branch_maps.len()
        )));
    }
    let is = trace.input.shape();
    let fs = trace.fused_map.shape();
    if (fs.h, fs.w) != (is.h, is.w) {
        return Err(Error::Shape(format!(
            "stale trace: fused map {fs} does not match input {is}"
        )));
    }
    Ok(())
}

/// Backpropagates loss gradients on the branch maps (`d_branch`, one per
/// branch, each `(1,1,h,w)`) and on the fused map through the whole network.
/// Activations not held by the trace are recomputed.
pub fn backward(
    state: &NetworkState,
    trace: &ForwardTrace,
    d_branch: &[Tensor4],
    d_fused: &Tensor4,
) -> Result<NetworkGrads> {
    check_input(state, &trace.input)?;
    check_trace(state, trace)?;
    let m = state.spec.branches();
    if d_branch.len() != m {
        return Err(Error::Shape(format!(
            "{} branch gradients for {m} branches",
            d_branch.len()
        )));
    }
    if d_fused.shape() != trace.fused_map.shape() {
        return Err(Error::Shape(format!(
            "fused gradient {} does not match map {}",
            d_fused.shape(),
            trace.fused_map.shape()
        )));
    }
    let layout = state.spec.layout()?;
    let mut grads = NetworkGrads::zeros_like(state);

    // Fusion: total gradient landing on each branch map.
    let mut d_maps: Vec<Tensor4> = d_branch.to_vec();
    match state.spec.fusion {
        FusionMode::Average => {
            for dm in d_maps.iter_mut() {
                dm.axpy(1.0 / m as f64, d_fused)?;
            }
        }
        FusionMode::LearnedSigmoid | FusionMode::LearnedLinear => {
            let dz = match state.spec.fusion {
                FusionMode::LearnedSigmoid => sigmoid_backward(&trace.fused_map, d_fused)?,
                _ => {
                    // Recompute the pre-clamp combination to find the active
                    // region; the clamp has zero gradient outside (0, 1).
                    let bias = state.fusion_weights[m];
                    let mut z = Tensor4::zeros(trace.fused_map.shape());
                    z.data_mut().fill(bias);
                    for (map, &w) in trace.branch_maps.iter().zip(&state.fusion_weights[..m]) {
                        z.axpy(w, map)?;
                    }
                    z.map_binary(d_fused, |zv, g| {
                        if zv > 0.0 && zv < 1.0 {
                            g
                        } else {
                            0.0
                        }
                    })?
                }
            };
            for (mi, map) in trace.branch_maps.iter().enumerate() {
                grads.fusion[mi] = dz
                    .data()
                    .iter()
                    .zip(map.data())
                    .map(|(a, b)| a * b)
                    .sum();
                d_maps[mi].axpy(state.fusion_weights[mi], &dz)?;
            }
            grads.fusion[m] = dz.data().iter().sum();
        }
    }

    // Branches: recompute the decoder stacks, then walk them backwards.
    // Gradient arriving at each tap activation accumulates here.
    let mut d_taps: Vec<Tensor4> = trace
        .taps
        .iter()
        .map(|t| Tensor4::zeros(t.shape()))
        .collect();
    for mi in 0..m {
        let run = run_branch(state, mi, &trace.taps[mi], layout.tap_depth[mi])?;
        let d_low = match state.spec.upsampling {
            UpsamplingMode::Learned => d_maps[mi].clone(),
            UpsamplingMode::FixedBilinear => {
                let up = bilinear_upsample_params(1 << layout.tap_depth[mi]);
                let (d_in, _) = deconv_backward(&run.low_map, &up, &d_maps[mi])?;
                d_in
            }
        };
        let d_logits = sigmoid_backward(&run.low_map, &d_low)?;
        let cls_input = run.post_relu.last().unwrap_or(&trace.taps[mi]);
        let (mut d_act, cls_grads) = conv_backward(cls_input, &state.classifiers[mi], &d_logits)?;
        grads.classifiers[mi] = cls_grads;
        for li in (0..state.decoders[mi].len()).rev() {
            let d_z = relu_backward(&run.post_relu[li], &d_act)?;
            let (d_in, layer_grads) =
                deconv_backward(&run.deconv_inputs[li], &state.decoders[mi][li], &d_z)?;
            grads.decoders[mi][li] = layer_grads;
            d_act = d_in;
        }
        d_taps[mi].axpy(1.0, &d_act)?;
    }

    // Encoder: recompute activations, walk layers in reverse, folding in
    // each tap's gradient at the layer where it was taken.
    let enc = run_encoder(state, &trace.input, &layout)?;
    let last = state.encoder.len() - 1;
    let mut d_act = Tensor4::zeros(enc.post_relu[last].shape());
    let mut pool_idx = enc.pool_argmax.len();
    for i in (0..state.encoder.len()).rev() {
        if layout.pool_after[i] {
            pool_idx -= 1;
            let d_pool = d_act;
            d_act = maxpool_backward(
                &trace.pool_argmax[pool_idx],
                &d_pool,
                enc.post_relu[i].shape(),
            )?;
        }
        if let Some(branch) = layout.tap_conv.iter().position(|&ci| ci == i) {
            d_act.axpy(1.0, &d_taps[branch])?;
        }
        let d_z = relu_backward(&enc.post_relu[i], &d_act)?;
        let (d_in, layer_grads) = conv_backward(&enc.conv_inputs[i], &state.encoder[i], &d_z)?;
        grads.encoder[i] = layer_grads;
        d_act = d_in;
    }
    Ok(grads)
}
