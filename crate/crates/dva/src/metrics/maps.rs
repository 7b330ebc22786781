//! Validated map types the metrics operate on. Constructing one checks the
//! domain contract once, so the metric functions can assume it.

use std::collections::BTreeSet;

use crate::tensor::Tensor4;
use crate::{Error, Result};

fn check_dims(h: usize, w: usize, len: usize) -> Result<()> {
    if h == 0 || w == 0 {
        return Err(Error::Metric(format!("empty map {h}x{w}")));
    }
    if len != h * w {
        return Err(Error::Metric(format!(
            "map data length {len} does not match {h}x{w}"
        )));
    }
    Ok(())
}

/// A predicted saliency map: values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct SaliencyMap {
    h: usize,
    w: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(h: usize, w: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(h, w, values.len())?;
        if let Some(v) = values.iter().find(|v| !v.is_finite() || !(0.0..=1.0).contains(*v)) {
            return Err(Error::Metric(format!(
                "saliency value {v} outside [0, 1]"
            )));
        }
        Ok(SaliencyMap { h, w, values })
    }

    /// Wraps a `(1, 1, h, w)` tensor.
    pub fn from_tensor(t: &Tensor4) -> Result<Self> {
        let s = t.shape();
        if s.n != 1 || s.c != 1 {
            return Err(Error::Metric(format!("expected a 1x1xHxW map, got {s}")));
        }
        SaliencyMap::new(s.h, s.w, t.data().to_vec())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// A nonnegative density, e.g. a ground-truth attention map. Any positive
/// total mass is allowed; metrics normalize as they need.
#[derive(Debug, Clone)]
pub struct ContinuousMap {
    h: usize,
    w: usize,
    values: Vec<f64>,
}

impl ContinuousMap {
    pub fn new(h: usize, w: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(h, w, values.len())?;
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Metric(format!(
                "density value {v} is negative or non-finite"
            )));
        }
        Ok(ContinuousMap { h, w, values })
    }

    pub fn from_tensor(t: &Tensor4) -> Result<Self> {
        let s = t.shape();
        if s.n != 1 || s.c != 1 {
            return Err(Error::Metric(format!("expected a 1x1xHxW map, got {s}")));
        }
        ContinuousMap::new(s.h, s.w, t.data().to_vec())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Recorded fixation locations: at least one `(y, x)` point inside the map,
/// deduplicated.
#[derive(Debug, Clone)]
pub struct FixationMap {
    h: usize,
    w: usize,
    points: Vec<(usize, usize)>,
}

impl FixationMap {
    pub fn new(h: usize, w: usize, points: &[(usize, usize)]) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::Metric(format!("empty fixation map {h}x{w}")));
        }
        if points.is_empty() {
            return Err(Error::Metric("fixation map has no fixations".into()));
        }
        let unique: BTreeSet<(usize, usize)> = points.iter().copied().collect();
        for &(y, x) in &unique {
            if y >= h || x >= w {
                return Err(Error::Metric(format!(
                    "fixation ({y}, {x}) outside {h}x{w} map"
                )));
            }
        }
        Ok(FixationMap {
            h,
            w,
            points: unique.into_iter().collect(),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    /// Unique points in row-major order.
    pub fn points(&self) -> &[(usize, usize)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires at least one point
    }

    /// Row-major boolean mask of fixated pixels.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.h * self.w];
        for &(y, x) in &self.points {
            m[y * self.w + x] = true;
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    #[test]
    fn saliency_map_enforces_range() {
        assert!(SaliencyMap::new(2, 2, vec![0.0, 0.5, 1.0, 0.2]).is_ok());
        assert!(SaliencyMap::new(2, 2, vec![0.0, 0.5, 1.2, 0.2]).is_err());
        assert!(SaliencyMap::new(2, 2, vec![0.0, -0.1, 1.0, 0.2]).is_err());
        assert!(SaliencyMap::new(2, 2, vec![0.0, f64::NAN, 1.0, 0.2]).is_err());
        assert!(SaliencyMap::new(2, 3, vec![0.0; 4]).is_err());
        assert!(SaliencyMap::new(0, 3, vec![]).is_err());
    }

    #[test]
    fn continuous_map_allows_any_positive_scale() {
        let m = ContinuousMap::new(1, 3, vec![0.0, 2.5, 40.0]).unwrap();
        assert_eq!(m.total_mass(), 42.5);
        assert!(ContinuousMap::new(1, 3, vec![0.0, -2.5, 40.0]).is_err());
    }

    #[test]
    fn fixation_map_dedupes_and_bounds_checks() {
        let f = FixationMap::new(4, 4, &[(1, 2), (3, 3), (1, 2)]).unwrap();
        assert_eq!(f.points(), &[(1, 2), (3, 3)]);
        assert_eq!(f.len(), 2);
        let mask = f.mask();
        assert!(mask[1 * 4 + 2] && mask[3 * 4 + 3]);
        assert_eq!(mask.iter().filter(|&&b| b).count(), 2);
        assert!(FixationMap::new(4, 4, &[(4, 0)]).is_err());
        assert!(FixationMap::new(4, 4, &[]).is_err());
    }

    #[test]
    fn tensor_wrappers_insist_on_single_channel() {
        let t = Tensor4::zeros(Shape4::new(1, 3, 2, 2));
        assert!(SaliencyMap::from_tensor(&t).is_err());
        let ok = Tensor4::zeros(Shape4::new(1, 1, 2, 2));
        assert!(SaliencyMap::from_tensor(&ok).is_ok());
        assert!(ContinuousMap::from_tensor(&ok).is_ok());
    }
}
