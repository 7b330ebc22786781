//! Dense rank-4 tensors in `(n, c, h, w)` row-major layout.
//!
//! All numeric state in this crate lives in these: images, activations,
//! kernels and gradients. Everything is `f64`; that makes finite-difference
//! gradient checks meaningful and keeps results bit-reproducible. Debug
//! builds additionally assert that no operation produces NaN or infinity
//! from finite inputs.

use crate::rng::Rng;
use crate::{Error, Result};

/// Dimensions of a [`Tensor4`]: batch, channels, height, width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { n, c, h, w }
    }

    /// Total element count.
    pub fn count(&self) -> usize {
        self.n * self.c * self.h * self.w
    }
}

impl std::fmt::Display for Shape4 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense rank-4 tensor, row-major over `(n, c, h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    shape: Shape4,
    data: Vec<f64>,
}

impl Tensor4 {
    /// Wraps existing data; the length must match the shape.
    pub fn new(shape: Shape4, data: Vec<f64>) -> Result<Self> {
        if shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0 {
            return Err(Error::Shape(format!("empty dimension in shape {shape}")));
        }
        if data.len() != shape.count() {
            return Err(Error::Shape(format!(
                "shape {shape} needs {} values, got {}",
                shape.count(),
                data.len()
            )));
        }
        let t = Tensor4 { shape, data };
        t.debug_check_finite("new");
        Ok(t)
    }

    pub fn zeros(shape: Shape4) -> Self {
        Tensor4 {
            shape,
            data: vec![0.0; shape.count()],
        }
    }

    /// Fills a fresh tensor with independent normal draws in row-major
    /// order. The same seed state always yields bit-identical contents;
    /// `stddev == 0` gives a tensor that is exactly `mean` everywhere.
    pub fn gaussian(shape: Shape4, mean: f64, stddev: f64, rng: &mut Rng) -> Self {
        let mut data = Vec::with_capacity(shape.count());
        for _ in 0..shape.count() {
            data.push(rng.normal(mean, stddev));
        }
        let t = Tensor4 { shape, data };
        t.debug_check_finite("gaussian");
        t
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Flat offset of `(n, c, y, x)`.
    #[inline]
    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(n, c, y, x)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut f64 {
        let i = self.idx(n, c, y, x);
        &mut self.data[i]
    }

    /// Contiguous `(h, w)` plane for one batch item and channel.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let start = self.idx(n, c, 0, 0);
        &self.data[start..start + self.shape.h * self.shape.w]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let start = self.idx(n, c, 0, 0);
        let len = self.shape.h * self.shape.w;
        &mut self.data[start..start + len]
    }

    /// Elementwise combination of two same-shaped tensors.
    pub fn map_binary(&self, other: &Tensor4, f: impl Fn(f64, f64) -> f64) -> Result<Tensor4> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "elementwise op on mismatched shapes {} and {}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        let t = Tensor4 {
            shape: self.shape,
            data,
        };
        t.debug_check_finite("map_binary");
        Ok(t)
    }

    pub fn map_unary(&self, f: impl Fn(f64) -> f64) -> Tensor4 {
        let t = Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&a| f(a)).collect(),
        };
        t.debug_check_finite("map_unary");
        t
    }

    /// `self += scale * other`; shapes must match.
    pub fn axpy(&mut self, scale: f64, other: &Tensor4) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "axpy on mismatched shapes {} and {}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        self.debug_check_finite("axpy");
        Ok(())
    }

    /// Aggregate statistics over all elements.
    pub fn stats(&self) -> Stats {
        reduce_stats(&self.data)
    }

    #[inline]
    pub(crate) fn debug_check_finite(&self, what: &str) {
        if cfg!(debug_assertions) {
            for (i, v) in self.data.iter().enumerate() {
                debug_assert!(
                    v.is_finite(),
                    "non-finite value {v} at flat index {i} after {what}"
                );
            }
        }
    }
}

/// Mean, population standard deviation and sum of a value slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub stddev: f64,
    pub sum: f64,
}

/// Computes [`Stats`] over a slice. The standard deviation is the population
/// form (divide by the count, not count - 1), matching how saliency maps are
/// standardized for scoring.
pub fn reduce_stats(values: &[f64]) -> Stats {
    assert!(!values.is_empty(), "stats of empty slice");
    let n = values.len() as f64;
    let sum: f64 = values.iter().sum();
    let mean = sum / n;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Stats {
        mean,
        stddev: var.sqrt(),
        sum,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zeros_is_all_zero() {
        let t = Tensor4::zeros(Shape4::new(2, 3, 4, 5));
        assert_eq!(t.data().len(), 120);
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn new_rejects_wrong_length_and_empty_dims() {
        assert!(Tensor4::new(Shape4::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
        assert!(Tensor4::new(Shape4::new(1, 0, 2, 2), vec![]).is_err());
    }

    #[test]
    fn indexing_is_row_major() {
        let data: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let t = Tensor4::new(Shape4::new(2, 3, 2, 2), data).unwrap();
        // (n, c, y, x) -> ((n*C + c)*H + y)*W + x
        assert_eq!(t.at(0, 0, 0, 0), 0.0);
        assert_eq!(t.at(0, 0, 0, 1), 1.0);
        assert_eq!(t.at(0, 1, 0, 0), 4.0);
        assert_eq!(t.at(1, 0, 0, 0), 12.0);
        assert_eq!(t.at(1, 2, 1, 1), 23.0);
        assert_eq!(t.plane(1, 2), &[20.0, 21.0, 22.0, 23.0]);
    }

    #[test]
    fn gaussian_same_seed_bitwise_identical() {
        let shape = Shape4::new(2, 3, 5, 7);
        let a = Tensor4::gaussian(shape, 0.0, 0.01, &mut Rng::new(77));
        let b = Tensor4::gaussian(shape, 0.0, 0.01, &mut Rng::new(77));
        assert_eq!(a.data(), b.data());
        let c = Tensor4::gaussian(shape, 0.0, 0.01, &mut Rng::new(78));
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn gaussian_zero_stddev_is_constant_mean() {
        let t = Tensor4::gaussian(Shape4::new(1, 2, 3, 3), 0.5, 0.0, &mut Rng::new(1));
        assert!(t.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn map_binary_adds_and_checks_shapes() {
        let a = Tensor4::new(Shape4::new(1, 1, 1, 3), vec![1.0, 2.0, 3.0]).unwrap();
        let b = Tensor4::new(Shape4::new(1, 1, 1, 3), vec![10.0, 20.0, 30.0]).unwrap();
        let sum = a.map_binary(&b, |x, y| x + y).unwrap();
        assert_eq!(sum.data(), &[11.0, 22.0, 33.0]);
        let c = Tensor4::zeros(Shape4::new(1, 1, 3, 1));
        assert!(a.map_binary(&c, |x, y| x + y).is_err());
    }

    #[test]
    fn stats_match_hand_computation() {
        // 2x2 map [[1,2],[3,4]]: mean 2.5, population stddev sqrt(1.25), sum 10.
        let t = Tensor4::new(Shape4::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = t.stats();
        assert_relative_eq!(s.mean, 2.5);
        assert_relative_eq!(s.stddev, 1.25f64.sqrt(), max_relative = 1e-12);
        assert_relative_eq!(s.stddev, 1.1180, max_relative = 1e-4);
        assert_relative_eq!(s.sum, 10.0);
    }

    #[test]
    fn stats_match_naive_reference_on_random_data() {
        let t = Tensor4::gaussian(Shape4::new(2, 2, 7, 5), 1.5, 2.0, &mut Rng::new(4));
        let s = t.stats();
        let n = t.data().len() as f64;
        let mean: f64 = t.data().iter().sum::<f64>() / n;
        let var: f64 = t.data().iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / n;
        assert_relative_eq!(s.mean, mean, max_relative = 1e-12);
        assert_relative_eq!(s.stddev, var.sqrt(), max_relative = 1e-12);
    }

    #[cfg(debug_assertions)]
    #[test]
    #[should_panic(expected = "non-finite")]
    fn debug_build_rejects_nan() {
        let _ = Tensor4::new(Shape4::new(1, 1, 1, 2), vec![1.0, f64::NAN]);
    }
}
