//! Plane-level resampling and blurring. Both are written against raw `f64`
//! planes so the image pipeline and the metrics can share them.

use crate::tensor::{Shape4, Tensor4};
use crate::{Error, Result};

/// Center-aligned bilinear resample of an `sh x sw` plane to `dh x dw`.
///
/// Destination pixel centers map to source coordinates via
/// `src = (dst + 0.5) * (src_len / dst_len) - 0.5`, clamped at the borders.
/// When the sizes match this reduces to an exact copy.
pub fn resize_plane(src: &[f64], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f64> {
    assert_eq!(src.len(), sh * sw, "plane length mismatch");
    assert!(sh > 0 && sw > 0 && dh > 0 && dw > 0);
    let mut out = Vec::with_capacity(dh * dw);
    let sy_scale = sh as f64 / dh as f64;
    let sx_scale = sw as f64 / dw as f64;
    for dy in 0..dh {
        let sy = ((dy as f64 + 0.5) * sy_scale - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let fy = sy - y0 as f64;
        for dx in 0..dw {
            let sx = ((dx as f64 + 0.5) * sx_scale - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let fx = sx - x0 as f64;
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bottom = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Resizes every channel plane of a tensor to `dh x dw`.
pub fn resize_tensor(t: &Tensor4, dh: usize, dw: usize) -> Result<Tensor4> {
    let s = t.shape();
    if dh == 0 || dw == 0 {
        return Err(Error::Shape(format!("cannot resize {s} to {dh}x{dw}")));
    }
    let mut out = Tensor4::zeros(Shape4::new(s.n, s.c, dh, dw));
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = resize_plane(t.plane(n, c), s.h, s.w, dh, dw);
            out.plane_mut(n, c).copy_from_slice(&plane);
        }
    }
    Ok(out)
}

/// Truncated Gaussian kernel, normalized to sum 1. The radius of
/// `ceil(6.5 sigma)` keeps the truncation error below 1e-9 of the peak.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    assert!(sigma > 0.0 && sigma.is_finite());
    let radius = (6.5 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian blur with zero padding outside the plane.
pub fn blur_plane(src: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    assert_eq!(src.len(), h * w);
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                let sx = x as i64 + ki as i64 - radius;
                if sx >= 0 && (sx as usize) < w {
                    acc += kv * row[sx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                let sy = y as i64 + ki as i64 - radius;
                if sy >= 0 && (sy as usize) < h {
                    acc += kv * tmp[sy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn same_size_resize_is_an_exact_copy() {
        let src: Vec<f64> = (0..12).map(|v| v as f64 * 0.37).collect();
        let out = resize_plane(&src, 3, 4, 3, 4);
        assert_eq!(out, src);
    }

    #[test]
    fn upscale_interpolates_between_pixel_centers() {
        // 1x2 plane [0, 1] to 1x4: centers map to source x of -0.25, 0.25,
        // 0.75, 1.25; the outer two clamp, the inner two interpolate.
        let out = resize_plane(&[0.0, 1.0], 1, 2, 1, 4);
        assert_relative_eq!(out[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(out[1], 0.25, epsilon = 1e-12);
        assert_relative_eq!(out[2], 0.75, epsilon = 1e-12);
        assert_relative_eq!(out[3], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn downscale_of_constant_plane_is_constant() {
        let src = vec![0.7; 10 * 14];
        let out = resize_plane(&src, 10, 14, 3, 5);
        for v in out {
            assert_relative_eq!(v, 0.7, epsilon = 1e-12);
        }
    }

    #[test]
    fn resize_preserves_value_range() {
        let mut rng = crate::rng::Rng::new(12);
        let src: Vec<f64> = (0..64).map(|_| rng.next_f64()).collect();
        let out = resize_plane(&src, 8, 8, 13, 5);
        let (lo, hi) = src
            .iter()
            .fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        assert!(out.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }

    #[test]
    fn blurred_impulse_matches_the_closed_form() {
        let (h, w) = (16, 16);
        let (cy, cx) = (8, 8);
        let mut src = vec![0.0; h * w];
        src[cy * w + cx] = 1.0;
        let sigma = 0.5;
        let out = blur_plane(&src, h, w, sigma);
        let peak = out[cy * w + cx];
        for y in 0..h {
            for x in 0..w {
                let d2 = ((y as f64 - cy as f64).powi(2)) + ((x as f64 - cx as f64).powi(2));
                let expected = (-d2 / (2.0 * sigma * sigma)).exp();
                assert!(
                    (out[y * w + x] / peak - expected).abs() < 1e-9,
                    "({y},{x}): {} vs {expected}",
                    out[y * w + x] / peak
                );
            }
        }
    }

    #[test]
    fn interior_blur_conserves_mass() {
        let (h, w) = (32, 32);
        let mut src = vec![0.0; h * w];
        src[15 * w + 17] = 2.5;
        src[16 * w + 16] = 1.5;
        let out = blur_plane(&src, h, w, 1.0);
        let sum: f64 = out.iter().sum();
        assert_relative_eq!(sum, 4.0, epsilon = 1e-9);
    }

    #[test]
    fn blur_of_constant_plane_shrinks_only_at_borders() {
        let src = vec![1.0; 24 * 24];
        let out = blur_plane(&src, 24, 24, 0.8);
        // Center pixels see the full kernel mass.
        assert_relative_eq!(out[12 * 24 + 12], 1.0, epsilon = 1e-12);
        // Corner pixels lose the part of the kernel hanging outside.
        assert!(out[0] < 1.0);
    }
}
