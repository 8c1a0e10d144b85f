//! Gaussian kernel density estimation with Silverman's rule-of-thumb
//! bandwidth.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GaussianKde {
    points: Vec<f64>,
    /// Normalized to sum to one.
    weights: Vec<f64>,
    bandwidth: f64,
}

impl GaussianKde {
    /// Weighted estimate with bandwidth `1.06 * sd * n^(-1/5)`, where `sd`
    /// is the weighted standard deviation and `n` the sample size that the
    /// weights summarize.
    pub fn weighted(points: &[f64], weights: &[f64], n: usize) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(Error::InvalidArgument("kernel density needs matching, nonempty points and weights".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("kernel weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("kernel weights sum to zero".into()));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mean: f64 = points.iter().zip(&weights).map(|(x, w)| w * x).sum();
        let var: f64 = points.iter().zip(&weights).map(|(x, w)| w * (x - mean) * (x - mean)).sum();
        let sd = var.sqrt();
        if !(sd > 0.0) {
            return Err(Error::DensityTooSmall { at: mean, value: 0.0 });
        }
        let bandwidth = 1.06 * sd * (n as f64).powf(-0.2);
        Ok(Self { points: points.to_vec(), weights, bandwidth })
    }

    pub fn unweighted(points: &[f64]) -> Result<Self> {
        Self::weighted(points, &vec![1.0; points.len()], points.len())
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn density(&self, x: f64) -> f64 {
        let norm = 1.0 / (self.bandwidth * (2.0 * PI).sqrt());
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| {
                let z = (x - p) / self.bandwidth;
                w * (-0.5 * z * z).exp()
            })
            .sum::<f64>()
            * norm
    }
}
