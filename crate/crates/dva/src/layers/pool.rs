//! 2x2 stride-2 max pooling with argmax bookkeeping.

use crate::tensor::{Shape4, Tensor4};
use crate::{Error, Result};

/// Halves both spatial dimensions, keeping the maximum of each 2x2 window.
/// Returns the pooled tensor and, per output element, the flat index of the
/// winning input element; ties go to the first candidate in row-major scan
/// order. Input dims must be even.
pub fn maxpool_forward(x: &Tensor4) -> Result<(Tensor4, Vec<usize>)> {
    let xs = x.shape();
    if xs.h % 2 != 0 || xs.w % 2 != 0 {
        return Err(Error::Shape(format!(
            "maxpool needs even spatial dims, got {}x{}",
            xs.h, xs.w
        )));
    }
    let os = Shape4::new(xs.n, xs.c, xs.h / 2, xs.w / 2);
    let mut out = Tensor4::zeros(os);
    let mut argmax = vec![0usize; os.count()];
    let mut oi = 0usize;
    for n in 0..xs.n {
        for c in 0..xs.c {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let (iy, ix) = (oy * 2, ox * 2);
                    let mut best_idx = x.idx(n, c, iy, ix);
                    let mut best = x.data()[best_idx];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let cand = x.idx(n, c, iy + dy, ix + dx);
                        let v = x.data()[cand];
                        if v > best {
                            best = v;
                            best_idx = cand;
                        }
                    }
                    out.data_mut()[oi] = best;
                    argmax[oi] = best_idx;
                    oi += 1;
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Routes each output gradient back to the input element that won its
/// window; everything else gets zero.
pub fn maxpool_backward(argmax: &[usize], d_out: &Tensor4, in_shape: Shape4) -> Result<Tensor4> {
    let os = d_out.shape();
    let expected = Shape4::new(in_shape.n, in_shape.c, in_shape.h / 2, in_shape.w / 2);
    if os != expected || argmax.len() != os.count() {
        return Err(Error::Shape(format!(
            "maxpool backward: gradient {os} with {} indices does not match input {in_shape}",
            argmax.len()
        )));
    }
    let mut d_x = Tensor4::zeros(in_shape);
    for (&src, &g) in argmax.iter().zip(d_out.data()) {
        d_x.data_mut()[src] += g;
    }
    Ok(d_x)
}
