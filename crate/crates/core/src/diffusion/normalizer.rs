use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions narrower than this are widened symmetrically.
const MIN_SPAN: f64 = 1e-3;

/// Per-dimension affine map of the data range onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        let n = Self { min, max };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min.len() != self.max.len() || self.min.is_empty() {
            return Err(Error::dim("normalizer min/max lengths differ"));
        }
        if self.min.iter().zip(&self.max).any(|(a, b)| !(b > a) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::InvalidArgument("normalizer needs finite max > min per dimension".into()));
        }
        Ok(())
    }

    /// Fits the range of every column over a set of `H x d` samples.
    pub fn fit<'a>(samples: impl IntoIterator<Item = ArrayView2<'a, f64>>) -> Result<Self> {
        let mut min: Vec<f64> = Vec::new();
        let mut max: Vec<f64> = Vec::new();
        for s in samples {
            if min.is_empty() {
                min = vec![f64::INFINITY; s.ncols()];
                max = vec![f64::NEG_INFINITY; s.ncols()];
            }
            if s.ncols() != min.len() {
                return Err(Error::dim("samples have differing widths"));
            }
            for row in s.outer_iter() {
                for (j, &v) in row.iter().enumerate() {
                    min[j] = min[j].min(v);
                    max[j] = max[j].max(v);
                }
            }
        }
        if min.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for (lo, hi) in min.iter_mut().zip(max.iter_mut()) {
            if *hi - *lo < MIN_SPAN {
                let mid = 0.5 * (*hi + *lo);
                *lo = mid - 0.5 * MIN_SPAN;
                *hi = mid + 0.5 * MIN_SPAN;
            }
        }
        Self::new(min, max)
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Half-width of each dimension's range: `d(physical) / d(normalized)`.
    pub fn scale(&self) -> Vec<f64> {
        self.min.iter().zip(&self.max).map(|(a, b)| 0.5 * (b - a)).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.min.iter().zip(&self.max).map(|(a, b)| 0.5 * (b + a)).collect()
    }

    pub fn normalize(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.ncols(), self.dim(), "normalizer dimension mismatch");
        let (c, s) = (self.center(), self.scale());
        Array2::from_shape_fn(x.dim(), |(h, j)| (x[[h, j]] - c[j]) / s[j])
    }

    pub fn denormalize(&self, u: &Array2<f64>) -> Array2<f64> {
        assert_eq!(u.ncols(), self.dim(), "normalizer dimension mismatch");
        let (c, s) = (self.center(), self.scale());
        Array2::from_shape_fn(u.dim(), |(h, j)| u[[h, j]] * s[j] + c[j])
    }

    pub fn normalize_row(&self, x: &[f64]) -> Vec<f64> {
        let (c, s) = (self.center(), self.scale());
        x.iter().enumerate().map(|(j, v)| (v - c[j]) / s[j]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_range() {
        let a = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64 * 0.37 - 1.0);
        let b = Array2::from_shape_fn((4, 3), |(i, j)| (i as f64 - j as f64) * 2.1);
        let n = Normalizer::fit([a.view(), b.view()]).unwrap();
        let u = n.normalize(&a);
        assert!(u.iter().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
        let back = n.denormalize(&u);
        assert!((&back - &a).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn constant_dimension_is_widened() {
        let a = Array2::from_elem((3, 2), 0.5);
        let n = Normalizer::fit([a.view()]).unwrap();
        assert!(n.max[0] > n.min[0]);
        assert!(n.normalize(&a).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn empty_fit_fails() {
        assert!(matches!(Normalizer::fit(std::iter::empty()), Err(Error::EmptyDataset)));
    }
}
