use serde::Serialize;

use crate::error::{Error, Result};

/// A discrete distribution on sorted, distinct support points.
#[derive(Debug, Clone, Serialize)]
pub struct FittedCdf {
    pub population_index: usize,
    pub support: Vec<f64>,
    pub mass: Vec<f64>,
    /// Running sums of `mass`.
    pub cumulative: Vec<f64>,
}

impl FittedCdf {
    /// Build from per-observation masses; tied values are merged.
    pub fn from_masses(values: &[f64], masses: &[f64], population_index: usize) -> Self {
        assert_eq!(values.len(), masses.len());
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let mut support: Vec<f64> = Vec::with_capacity(values.len());
        let mut mass: Vec<f64> = Vec::with_capacity(values.len());
        for i in order {
            match support.last() {
                Some(&v) if v == values[i] => *mass.last_mut().unwrap() += masses[i],
                _ => {
                    support.push(values[i]);
                    mass.push(masses[i]);
                }
            }
        }
        let cumulative = mass
            .iter()
            .scan(0.0, |acc, m| {
                *acc += m;
                Some(*acc)
            })
            .collect();
        Self { population_index, support, mass, cumulative }
    }

    /// `G(t)`: total mass at support points `<= t`.
    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.support.partition_point(|&s| s <= t);
        if idx == 0 {
            0.0
        } else {
            self.cumulative[idx - 1]
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}

/// `inf { t : G(t) >= alpha }`.
///
/// Cumulative sums carry rounding error of order `1e-15`; a level that the
/// CDF reaches only up to that error counts as reached.
pub fn cel_quantile(cdf: &FittedCdf, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile level must lie in (0, 1), got {alpha}")));
    }
    if cdf.support.is_empty() {
        return Err(Error::InvalidData("empty distribution".into()));
    }
    let target = alpha - QUANTILE_SLACK;
    let idx = cdf.cumulative.partition_point(|&c| c < target);
    Ok(cdf.support[idx.min(cdf.support.len() - 1)])
}

pub(crate) const QUANTILE_SLACK: f64 = 1e-12;

/// Quantiles at several levels from masses listed in increasing order of
/// value (`order` sorts `values`). Ties need no merging: the infimum is
/// attained at the first support point whose running sum reaches the level.
pub(crate) fn sorted_quantiles(
    values: &[f64],
    order: &[usize],
    mass: impl Fn(usize) -> f64,
    alphas: &[f64],
    out: &mut [f64],
) {
    let mut cum = 0.0;
    let mut remaining: Vec<usize> = (0..alphas.len()).collect();
    let mut pos = 0;
    while pos < order.len() && !remaining.is_empty() {
        let v = values[order[pos]];
        // Accumulate the whole tie group before testing the levels.
        while pos < order.len() && values[order[pos]] == v {
            cum += mass(order[pos]);
            pos += 1;
        }
        remaining.retain(|&a| {
            if cum >= alphas[a] - QUANTILE_SLACK {
                out[a] = v;
                false
            } else {
                true
            }
        });
    }
    let last = order.last().map_or(f64::NAN, |&i| values[i]);
    for a in remaining {
        out[a] = last;
    }
}
