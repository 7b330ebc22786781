//! Differentiable layer primitives: convolution, transposed convolution,
//! max pooling and the two pointwise nonlinearities.
//!
//! Convolution here means cross-correlation (no kernel flip), computed with
//! zero padding. Transposed convolution is defined as the exact adjoint of
//! the convolution's linear map and is what the decoder uses to upsample;
//! its forward pass is implemented as a direct scatter so that the adjoint
//! relation with [`conv_backward_d_input`] can be verified between two
//! genuinely different code paths.
//!
//! Every backward function returns gradients that match central finite
//! differences; the tests in each submodule and the [`crate::gradcheck`]
//! harness hold them to that.

mod act;
mod conv;
mod deconv;
mod kernels;
mod pool;

pub use act::{relu, relu_backward, sigmoid, sigmoid_backward};
pub use conv::{conv_backward, conv_backward_d_input, conv_forward};
pub use deconv::{deconv_backward, deconv_forward};
pub use pool::{maxpool_backward, maxpool_forward};

use crate::rng::Rng;
use crate::tensor::{Shape4, Tensor4};
use crate::{Error, Result};

/// Parameters of a convolution layer. Weights are `(out_c, in_c, kh, kw)`.
#[derive(Debug, Clone)]
pub struct ConvParams {
    pub weights: Tensor4,
    pub bias: Vec<f64>,
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    pub fn new(weights: Tensor4, bias: Vec<f64>, stride: usize, padding: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config("conv stride must be at least 1".into()));
        }
        if bias.len() != weights.shape().n {
            return Err(Error::Shape(format!(
                "conv bias length {} does not match {} output channels",
                bias.len(),
                weights.shape().n
            )));
        }
        Ok(ConvParams {
            weights,
            bias,
            stride,
            padding,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape().n
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape().c
    }
}

/// Parameters of a transposed convolution. Weights are `(in_c, out_c, kh,
/// kw)`; the kernel must be at least as large as the stride in both axes so
/// every output pixel receives a contribution.
#[derive(Debug, Clone)]
pub struct DeconvParams {
    pub weights: Tensor4,
    pub bias: Vec<f64>,
    pub stride: usize,
    pub padding: usize,
}

impl DeconvParams {
    pub fn new(weights: Tensor4, bias: Vec<f64>, stride: usize, padding: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config("deconv stride must be at least 1".into()));
        }
        let s = weights.shape();
        if s.h < stride || s.w < stride {
            return Err(Error::Config(format!(
                "deconv kernel {}x{} smaller than stride {}: output would have uncovered pixels",
                s.h, s.w, stride
            )));
        }
        if bias.len() != s.c {
            return Err(Error::Shape(format!(
                "deconv bias length {} does not match {} output channels",
                bias.len(),
                s.c
            )));
        }
        Ok(DeconvParams {
            weights,
            bias,
            stride,
            padding,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape().n
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape().c
    }
}

/// Weight and bias gradients of one layer.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub d_weights: Tensor4,
    pub d_bias: Vec<f64>,
}

/// Output extent of a convolution along one axis: `(in + 2*pad - k)/stride +
/// 1`, which must come out a positive integer.
pub fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let span = input as isize + 2 * pad as isize - k as isize;
    if span < 0 {
        return Err(Error::Shape(format!(
            "kernel {k} larger than padded input {input}+2*{pad}"
        )));
    }
    if span as usize % stride != 0 {
        return Err(Error::Shape(format!(
            "non-integral conv output: ({input} + 2*{pad} - {k}) not divisible by stride {stride}"
        )));
    }
    Ok(span as usize / stride + 1)
}

/// Output extent of a transposed convolution along one axis:
/// `stride*(in - 1) + k - 2*pad`.
pub fn deconv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let out = (stride * (input - 1) + k) as isize - 2 * pad as isize;
    if out < 1 {
        return Err(Error::Shape(format!(
            "deconv output collapses: stride {stride} * ({input} - 1) + {k} - 2*{pad} < 1"
        )));
    }
    Ok(out as usize)
}

/// One axis of the bilinear interpolation kernel of size `k`.
///
/// For even `k` (the upsampling case) the taps are symmetric around the half
/// pixel; `k = 4` gives `[0.25, 0.75, 0.75, 0.25]`, which used with stride 2
/// and padding 1 doubles a map while interpolating linearly.
pub fn bilinear_taps(k: usize) -> Vec<f64> {
    assert!(k >= 1);
    let factor = ((k + 1) / 2) as f64;
    let center = if k % 2 == 1 {
        factor - 1.0
    } else {
        factor - 0.5
    };
    (0..k)
        .map(|i| 1.0 - (i as f64 - center).abs() / factor)
        .collect()
}

/// How transposed-convolution kernels are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeconvInit {
    /// Every `(in, out)` channel pair gets the separable bilinear kernel
    /// scaled by `1/in_c`, so a freshly built decoder starts as channel-mean
    /// bilinear upsampling.
    Bilinear,
    /// Plain Gaussian(0, 0.01) draws.
    Gaussian,
}

/// Fresh deconv weights under the given policy. The Gaussian branch draws
/// from `rng` in row-major order; the bilinear branch is deterministic and
/// leaves `rng` untouched.
pub fn init_deconv_weights(
    in_c: usize,
    out_c: usize,
    k: usize,
    policy: DeconvInit,
    rng: &mut Rng,
) -> Tensor4 {
    let shape = Shape4::new(in_c, out_c, k, k);
    match policy {
        DeconvInit::Gaussian => Tensor4::gaussian(shape, 0.0, 0.01, rng),
        DeconvInit::Bilinear => {
            let taps = bilinear_taps(k);
            let scale = 1.0 / in_c as f64;
            let mut t = Tensor4::zeros(shape);
            for ic in 0..in_c {
                for oc in 0..out_c {
                    for (ky, ty) in taps.iter().enumerate() {
                        for (kx, tx) in taps.iter().enumerate() {
                            *t.at_mut(ic, oc, ky, kx) = ty * tx * scale;
                        }
                    }
                }
            }
            t
        }
    }
}

/// Fixed single-channel upsampling parameters for an exact factor: kernel
/// `2f`, stride `f`, padding `f/2`, unscaled bilinear taps. Even factors
/// only; doubling repeatedly covers the decoder's needs.
pub fn bilinear_upsample_params(factor: usize) -> DeconvParams {
    assert!(factor >= 2 && factor % 2 == 0, "factor must be even");
    let k = 2 * factor;
    let taps = bilinear_taps(k);
    let mut w = Tensor4::zeros(Shape4::new(1, 1, k, k));
    for (ky, ty) in taps.iter().enumerate() {
        for (kx, tx) in taps.iter().enumerate() {
            *w.at_mut(0, 0, ky, kx) = ty * tx;
        }
    }
    DeconvParams {
        weights: w,
        bias: vec![0.0],
        stride: factor,
        padding: factor / 2,
    }
}
