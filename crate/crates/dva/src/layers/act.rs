//! Pointwise nonlinearities: rectifier and logistic sigmoid.

use crate::tensor::Tensor4;
use crate::Result;

/// `max(0, x)` elementwise.
pub fn relu(x: &Tensor4) -> Tensor4 {
    x.map_unary(|v| v.max(0.0))
}

/// Passes gradient where the original input was strictly positive; the
/// subgradient at exactly zero is taken as zero.
pub fn relu_backward(x: &Tensor4, d_out: &Tensor4) -> Result<Tensor4> {
    x.map_binary(d_out, |xv, g| if xv > 0.0 { g } else { 0.0 })
}

/// Numerically stable logistic function, exact at the extremes: large
/// negative inputs underflow to 0 rather than dividing by infinity.
pub fn sigmoid(x: &Tensor4) -> Tensor4 {
    x.map_unary(sigmoid_scalar)
}

#[inline]
pub(crate) fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Gradient through the sigmoid given its *output* `y`: `d * y * (1 - y)`.
pub fn sigmoid_backward(y: &Tensor4, d_out: &Tensor4) -> Result<Tensor4> {
    y.map_binary(d_out, |yv, g| g * yv * (1.0 - yv))
}
