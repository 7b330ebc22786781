//! Transposed convolution: the upsampling layer of the decoder branches.
//!
//! The forward pass is the exact adjoint of a stride-`s` convolution's
//! linear map, implemented directly as a scatter: every input pixel spreads
//! its value over a `kh x kw` output window at stride offsets. With kernel 4,
//! stride 2, padding 1 it doubles the spatial dimensions.

use super::{deconv_out_dim, DeconvParams, LayerGrads};
use crate::tensor::{Shape4, Tensor4};
use crate::{Error, Result};

fn output_shape(x: Shape4, p: &DeconvParams) -> Result<Shape4> {
    let w = p.weights.shape();
    if x.c != w.n {
        return Err(Error::Shape(format!(
            "deconv expects {} input channels, image has {}",
            w.n, x.c
        )));
    }
    let oh = deconv_out_dim(x.h, w.h, p.stride, p.padding)?;
    let ow = deconv_out_dim(x.w, w.w, p.stride, p.padding)?;
    Ok(Shape4::new(x.n, w.c, oh, ow))
}

/// Fractionally strided upsampling: `out[n,o,i*s+ky-p,j*s+kx-p] +=
/// x[n,c,i,j] * w[c,o,ky,kx]`, plus the output-channel bias.
pub fn deconv_forward(x: &Tensor4, p: &DeconvParams) -> Result<Tensor4> {
    let xs = x.shape();
    let os = output_shape(xs, p)?;
    let ws = p.weights.shape();
    let (kh, kw) = (ws.h, ws.w);
    let wdata = p.weights.data();

    let mut out = Tensor4::zeros(os);
    for ni in 0..os.n {
        for o in 0..os.c {
            out.plane_mut(ni, o).fill(p.bias[o]);
        }
    }

    let pad = p.padding as isize;
    for ni in 0..xs.n {
        for ic in 0..xs.c {
            for i in 0..xs.h {
                let oy_base = (i * p.stride) as isize - pad;
                for j in 0..xs.w {
                    let v = x.at(ni, ic, i, j);
                    if v == 0.0 {
                        continue;
                    }
                    let ox_base = (j * p.stride) as isize - pad;
                    for o in 0..os.c {
                        let wk = &wdata[((ic * ws.c + o) * kh) * kw..((ic * ws.c + o) * kh + kh) * kw];
                        for ky in 0..kh {
                            let oy = oy_base + ky as isize;
                            if oy < 0 || oy >= os.h as isize {
                                continue;
                            }
                            let row_start = out.idx(ni, o, oy as usize, 0);
                            let orow = &mut out.data_mut()[row_start..row_start + os.w];
                            let wrow = &wk[ky * kw..(ky + 1) * kw];
                            for (kx, &wv) in wrow.iter().enumerate() {
                                let ox = ox_base + kx as isize;
                                if ox >= 0 && ox < os.w as isize {
                                    orow[ox as usize] += v * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out.debug_check_finite("deconv_forward");
    Ok(out)
}

/// Backward pass: the input gradient is the corresponding stride-`s`
/// cross-correlation of `d_out` (adjoint of the scatter), and the weight
/// gradient correlates input pixels with their output windows.
pub fn deconv_backward(
    x: &Tensor4,
    p: &DeconvParams,
    d_out: &Tensor4,
) -> Result<(Tensor4, LayerGrads)> {
    let xs = x.shape();
    let os = output_shape(xs, p)?;
    if d_out.shape() != os {
        return Err(Error::Shape(format!(
            "deconv backward: output gradient is {}, expected {os}",
            d_out.shape()
        )));
    }
    let ws = p.weights.shape();
    let (kh, kw) = (ws.h, ws.w);
    let wdata = p.weights.data();

    let mut d_bias = vec![0.0; os.c];
    for ni in 0..os.n {
        for o in 0..os.c {
            d_bias[o] += d_out.plane(ni, o).iter().sum::<f64>();
        }
    }

    let mut d_x = Tensor4::zeros(xs);
    let mut d_weights = Tensor4::zeros(ws);
    let dw = d_weights.data_mut();
    let pad = p.padding as isize;
    for ni in 0..xs.n {
        for ic in 0..xs.c {
            for i in 0..xs.h {
                let oy_base = (i * p.stride) as isize - pad;
                for j in 0..xs.w {
                    let ox_base = (j * p.stride) as isize - pad;
                    let xv = x.at(ni, ic, i, j);
                    let mut acc = 0.0;
                    for o in 0..os.c {
                        let kbase = (ic * ws.c + o) * kh * kw;
                        for ky in 0..kh {
                            let oy = oy_base + ky as isize;
                            if oy < 0 || oy >= os.h as isize {
                                continue;
                            }
                            let row_start = d_out.idx(ni, o, oy as usize, 0);
                            let drow = &d_out.data()[row_start..row_start + os.w];
                            for kx in 0..kw {
                                let ox = ox_base + kx as isize;
                                if ox >= 0 && ox < os.w as isize {
                                    let g = drow[ox as usize];
                                    let wi = kbase + ky * kw + kx;
                                    acc += wdata[wi] * g;
                                    dw[wi] += xv * g;
                                }
                            }
                        }
                    }
                    *d_x.at_mut(ni, ic, i, j) = acc;
                }
            }
        }
    }
    d_x.debug_check_finite("deconv_backward");
    d_weights.debug_check_finite("deconv_backward");
    Ok((d_x, LayerGrads { d_weights, d_bias }))
}
