//! Convolution (cross-correlation) forward and backward passes.

use super::kernels::{axpy, col2im_add, dot, im2col};
use super::{conv_out_dim, ConvParams, LayerGrads};
use crate::tensor::{Shape4, Tensor4};
use crate::{Error, Result};

/// Patch-buffer budget in `f64` elements (about 2 MiB); large images are
/// processed in output-row chunks so memory stays flat.
const COL_BUDGET: usize = 1 << 18;

fn output_shape(x: Shape4, p: &ConvParams) -> Result<Shape4> {
    let w = p.weights.shape();
    if x.c != w.c {
        return Err(Error::Shape(format!(
            "conv expects {} input channels, image has {}",
            w.c, x.c
        )));
    }
    let oh = conv_out_dim(x.h, w.h, p.stride, p.padding)?;
    let ow = conv_out_dim(x.w, w.w, p.stride, p.padding)?;
    Ok(Shape4::new(x.n, w.n, oh, ow))
}

fn row_chunk(k: usize, ow: usize, oh: usize) -> usize {
    (COL_BUDGET / (k * ow)).clamp(1, oh)
}

/// Cross-correlates `x` with the kernel bank: `out[n,o,y,x] = bias[o] +
/// sum_{c,ky,kx} x[n,c,y*s+ky-p,x*s+kx-p] * w[o,c,ky,kx]` with zeros outside
/// the image.
pub fn conv_forward(x: &Tensor4, p: &ConvParams) -> Result<Tensor4> {
    let xs = x.shape();
    let os = output_shape(xs, p)?;
    let ws = p.weights.shape();
    let (kh, kw) = (ws.h, ws.w);
    let k = ws.c * kh * kw;
    let wdata = p.weights.data();

    let mut out = Tensor4::zeros(os);
    for ni in 0..os.n {
        for o in 0..os.c {
            out.plane_mut(ni, o).fill(p.bias[o]);
        }
    }

    let chunk = row_chunk(k, os.w, os.h);
    let mut col = vec![0.0; k * chunk * os.w];
    let item = xs.c * xs.h * xs.w;
    for ni in 0..xs.n {
        let src = &x.data()[ni * item..(ni + 1) * item];
        let mut y0 = 0;
        while y0 < os.h {
            let y1 = (y0 + chunk).min(os.h);
            let pcols = (y1 - y0) * os.w;
            let cbuf = &mut col[..k * pcols];
            im2col(
                src, xs.c, xs.h, xs.w, kh, kw, p.stride, p.padding, os.w, y0, y1, cbuf,
            );
            for o in 0..os.c {
                let wrow = &wdata[o * k..(o + 1) * k];
                let start = out.idx(ni, o, y0, 0);
                let orow = &mut out.data_mut()[start..start + pcols];
                for (kk, &wv) in wrow.iter().enumerate() {
                    if wv != 0.0 {
                        axpy(wv, &cbuf[kk * pcols..(kk + 1) * pcols], orow);
                    }
                }
            }
            y0 = y1;
        }
    }
    out.debug_check_finite("conv_forward");
    Ok(out)
}

/// Gradient with respect to the convolution input: the exact adjoint of
/// [`conv_forward`]'s linear map applied to `d_out`.
pub fn conv_backward_d_input(d_out: &Tensor4, p: &ConvParams, in_shape: Shape4) -> Result<Tensor4> {
    let os = output_shape(in_shape, p)?;
    if d_out.shape() != os {
        return Err(Error::Shape(format!(
            "conv backward: output gradient is {}, expected {os}",
            d_out.shape()
        )));
    }
    let ws = p.weights.shape();
    let (kh, kw) = (ws.h, ws.w);
    let k = ws.c * kh * kw;
    let wdata = p.weights.data();

    let mut d_x = Tensor4::zeros(in_shape);
    let chunk = row_chunk(k, os.w, os.h);
    let mut colgrad = vec![0.0; k * chunk * os.w];
    let item = in_shape.c * in_shape.h * in_shape.w;
    for ni in 0..os.n {
        let mut y0 = 0;
        while y0 < os.h {
            let y1 = (y0 + chunk).min(os.h);
            let pcols = (y1 - y0) * os.w;
            let cbuf = &mut colgrad[..k * pcols];
            cbuf.fill(0.0);
            for o in 0..os.c {
                let start = d_out.idx(ni, o, y0, 0);
                let dorow = &d_out.data()[start..start + pcols];
                let wrow = &wdata[o * k..(o + 1) * k];
                for (kk, &wv) in wrow.iter().enumerate() {
                    if wv != 0.0 {
                        axpy(wv, dorow, &mut cbuf[kk * pcols..(kk + 1) * pcols]);
                    }
                }
            }
            let dst = &mut d_x.data_mut()[ni * item..(ni + 1) * item];
            col2im_add(
                cbuf, in_shape.c, in_shape.h, in_shape.w, kh, kw, p.stride, p.padding, os.w, y0,
                y1, dst,
            );
            y0 = y1;
        }
    }
    d_x.debug_check_finite("conv_backward_d_input");
    Ok(d_x)
}

/// Full backward pass: input gradient plus weight and bias gradients.
pub fn conv_backward(x: &Tensor4, p: &ConvParams, d_out: &Tensor4) -> Result<(Tensor4, LayerGrads)> {
    let xs = x.shape();
    let os = output_shape(xs, p)?;
    if d_out.shape() != os {
        return Err(Error::Shape(format!(
            "conv backward: output gradient is {}, expected {os}",
            d_out.shape()
        )));
    }
    let ws = p.weights.shape();
    let (kh, kw) = (ws.h, ws.w);
    let k = ws.c * kh * kw;

    let mut d_weights = Tensor4::zeros(ws);
    let mut d_bias = vec![0.0; os.c];
    for ni in 0..os.n {
        for o in 0..os.c {
            d_bias[o] += d_out.plane(ni, o).iter().sum::<f64>();
        }
    }

    let chunk = row_chunk(k, os.w, os.h);
    let mut col = vec![0.0; k * chunk * os.w];
    let item = xs.c * xs.h * xs.w;
    let dw = d_weights.data_mut();
    for ni in 0..xs.n {
        let src = &x.data()[ni * item..(ni + 1) * item];
        let mut y0 = 0;
        while y0 < os.h {
            let y1 = (y0 + chunk).min(os.h);
            let pcols = (y1 - y0) * os.w;
            let cbuf = &mut col[..k * pcols];
            im2col(
                src, xs.c, xs.h, xs.w, kh, kw, p.stride, p.padding, os.w, y0, y1, cbuf,
            );
            for o in 0..os.c {
                let start = d_out.idx(ni, o, y0, 0);
                let dorow = &d_out.data()[start..start + pcols];
                let dwrow = &mut dw[o * k..(o + 1) * k];
                for (kk, dwv) in dwrow.iter_mut().enumerate() {
                    *dwv += dot(dorow, &cbuf[kk * pcols..(kk + 1) * pcols]);
                }
            }
            y0 = y1;
        }
    }
    d_weights.debug_check_finite("conv_backward");

    let d_input = conv_backward_d_input(d_out, p, xs)?;
    Ok((d_input, LayerGrads { d_weights, d_bias }))
}
