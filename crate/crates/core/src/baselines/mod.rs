//! Comparators for the composite EL methods: empirical quantiles with
//! independence-based Wald intervals, Wilcoxon rank-sum tests and the
//! one-way random-effects ANOVA.

mod anova;
mod wilcoxon;

pub use anova::{anova_random_effects, AnovaTable};
pub use wilcoxon::{rank_sum_test, wilcoxon, wilcoxon_clustered, SplitLevel, WilcoxonResult, WilcoxonVariant};

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::PopulationSample;
use crate::error::{Error, Result};
use crate::kde::GaussianKde;

/// `inf { t : F_n(t) >= alpha }` for the unweighted empirical CDF.
pub fn empirical_quantile(sample: &[f64], alpha: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::InvalidArgument("empirical quantile of an empty sample".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile level must lie in (0, 1), got {alpha}")));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted_empirical_quantile(&sorted, alpha))
}

pub(crate) fn sorted_empirical_quantile(sorted: &[f64], alpha: f64) -> f64 {
    let n = sorted.len();
    // Smallest k with k / n >= alpha, guarding against alpha * n landing a
    // rounding error above an integer.
    let k = ((alpha * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

#[derive(Debug, Clone, Serialize)]
pub struct WaldInterval {
    pub estimate: f64,
    pub variance: f64,
    pub ci: [f64; 2],
    pub method: &'static str,
}

fn independence_variance(sample: &[f64], alpha: f64) -> Result<(f64, f64)> {
    let xi = empirical_quantile(sample, alpha)?;
    let g = GaussianKde::unweighted(sample)?.density(xi);
    if !(g > 0.0) {
        return Err(Error::DensityTooSmall { at: xi, value: g });
    }
    Ok((xi, alpha * (1.0 - alpha) / (sample.len() as f64 * g * g)))
}

fn wald(estimate: f64, variance: f64, gamma: f64) -> Result<WaldInterval> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    let z = Normal::standard().inverse_cdf(1.0 - gamma / 2.0);
    let half = z * variance.sqrt();
    Ok(WaldInterval {
        estimate,
        variance,
        ci: [estimate - half, estimate + half],
        method: "empirical-quantile-independence",
    })
}

/// Wald interval for the empirical `alpha`-quantile of one population,
/// with the variance `alpha (1 - alpha) / (n_r d g^2)` that treats all
/// observations as independent.
pub fn wald_interval(pop: &PopulationSample, alpha: f64, gamma: f64) -> Result<WaldInterval> {
    let (xi, var) = independence_variance(&pop.flat_values(), alpha)?;
    wald(xi, var, gamma)
}

/// Wald interval for `xi_r - xi_s`; the variances add.
pub fn wald_difference_interval(
    pop_r: &PopulationSample,
    pop_s: &PopulationSample,
    alpha: f64,
    gamma: f64,
) -> Result<WaldInterval> {
    let (xr, vr) = independence_variance(&pop_r.flat_values(), alpha)?;
    let (xs, vs) = independence_variance(&pop_s.flat_values(), alpha)?;
    wald(xr - xs, vr + vs, gamma)
}
