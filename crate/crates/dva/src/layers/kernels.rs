//! Inner-loop kernels backing the convolution routes.
//!
//! Everything here works on row-major `&[f64]`. The two arithmetic loops are
//! manually unrolled four wide; that fixed evaluation order is part of the
//! definition, so results stay bit-identical across runs and thread counts.

/// `y += a * x`, unrolled four wide.
#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    let split = x.len() / 4 * 4;
    let (xh, xt) = x.split_at(split);
    let (yh, yt) = y.split_at_mut(split);
    for (xc, yc) in xh.chunks_exact(4).zip(yh.chunks_exact_mut(4)) {
        yc[0] += a * xc[0];
        yc[1] += a * xc[1];
        yc[2] += a * xc[2];
        yc[3] += a * xc[3];
    }
    for (xv, yv) in xt.iter().zip(yt.iter_mut()) {
        *yv += a * xv;
    }
}

/// Dot product with four independent accumulators combined in a fixed order.
#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let split = x.len() / 4 * 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for (xc, yc) in x[..split].chunks_exact(4).zip(y[..split].chunks_exact(4)) {
        s0 += xc[0] * yc[0];
        s1 += xc[1] * yc[1];
        s2 += xc[2] * yc[2];
        s3 += xc[3] * yc[3];
    }
    let mut tail = 0.0;
    for (xv, yv) in x[split..].iter().zip(y[split..].iter()) {
        tail += xv * yv;
    }
    ((s0 + s1) + (s2 + s3)) + tail
}

/// Gathers the patch matrix for output rows `oy0..oy1` of one image. `src`
/// holds `c` contiguous `h x w` planes. The result has one row per kernel
/// coordinate `(ch, ky, kx)` and one column per output pixel in the row
/// range; `col` must hold `c*kh*kw * (oy1-oy0)*ow` values.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col(
    src: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ow: usize,
    oy0: usize,
    oy1: usize,
    col: &mut [f64],
) {
    let pcols = (oy1 - oy0) * ow;
    debug_assert_eq!(col.len(), c * kh * kw * pcols);
    let mut r = 0usize;
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let crow = &mut col[r * pcols..(r + 1) * pcols];
                r += 1;
                for oy in oy0..oy1 {
                    let dst = &mut crow[(oy - oy0) * ow..(oy - oy0 + 1) * ow];
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let srow = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *d = if ix >= 0 && ix < w as isize {
                            srow[ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch-matrix values back into the image
/// layout, accumulating where patches overlap.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im_add(
    col: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ow: usize,
    oy0: usize,
    oy1: usize,
    dst: &mut [f64],
) {
    let pcols = (oy1 - oy0) * ow;
    debug_assert_eq!(col.len(), c * kh * kw * pcols);
    debug_assert_eq!(dst.len(), c * h * w);
    let mut r = 0usize;
    for ch in 0..c {
        let plane = &mut dst[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let crow = &col[r * pcols..(r + 1) * pcols];
                r += 1;
                for oy in oy0..oy1 {
                    let src = &crow[(oy - oy0) * ow..(oy - oy0 + 1) * ow];
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            drow[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}
