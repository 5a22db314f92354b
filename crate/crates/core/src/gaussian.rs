//! One-dimensional Gaussian algebra.
//!
//! Every Gaussian density the filter touches is eventually reduced to a
//! product of two scalar laws. [`Gaussian1D::merge`] returns the normalized
//! product together with its *phase*, the negative log of the normalization
//! factor, so that
//!
//! ```text
//! exp(-(x-A1)^2/2V1) * exp(-(x-A2)^2/2V2) = exp(-(x-mean)^2/2var) * exp(-phase)
//! ```
//!
//! holds pointwise.

use crate::error::{Error, Result};

/// A scalar normal law `N(mean, variance)` with strictly positive variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian1D {
    mean: f64,
    variance: f64,
}

/// Product of two Gaussian laws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeResult {
    pub merged: Gaussian1D,
    /// `(A2 - A1)^2 / (2 (V1 + V2))`, always `>= 0`.
    pub phase: f64,
}

impl Gaussian1D {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(Error::InvalidInput(format!(
                "gaussian mean {mean} is not finite"
            )));
        }
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::InvalidInput(format!(
                "gaussian variance {variance} must be finite and positive"
            )));
        }
        Ok(Self { mean, variance })
    }

    pub fn standard() -> Self {
        Self {
            mean: 0.0,
            variance: 1.0,
        }
    }

    #[inline]
    pub fn mean(&self) -> f64 {
        self.mean
    }

    #[inline]
    pub fn variance(&self) -> f64 {
        self.variance
    }

    #[inline]
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Precision-weighted product of two laws.
    ///
    /// The merged mean is `(A1 V2 + A2 V1) / (V1 + V2)`; this is the only
    /// weighting for which the pointwise product identity holds.
    pub fn merge(&self, other: &Gaussian1D) -> MergeResult {
        let total = self.variance + other.variance;
        let variance = self.variance * other.variance / total;
        let mean = (self.mean * other.variance + other.mean * self.variance) / total;
        let gap = other.mean - self.mean;
        MergeResult {
            merged: Gaussian1D { mean, variance },
            phase: gap * gap / (2.0 * total),
        }
    }

    /// Maps a unit-normal reference draw onto this law.
    #[inline]
    pub fn sample_from(&self, xi: f64) -> f64 {
        self.mean + self.variance.sqrt() * xi
    }

    /// `-(x - mean)^2 / (2 variance)`.
    #[inline]
    pub fn log_density_unnormalized(&self, x: f64) -> f64 {
        let d = x - self.mean;
        -d * d / (2.0 * self.variance)
    }
}

/// Free-function form of [`Gaussian1D::merge`].
pub fn merge(g1: &Gaussian1D, g2: &Gaussian1D) -> MergeResult {
    g1.merge(g2)
}
