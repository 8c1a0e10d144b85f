//! Cluster bootstrap for composite EL quantiles and the monitoring test.
//!
//! A resample draws `n_k` clusters with replacement within each population.
//! Refitting uses the original observations weighted by how often their
//! cluster was drawn, which is the same objective as the materialized
//! resample; [`resample_clusters`] builds the materialized dataset for
//! callers that want it.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::basis::BasisFunction;
use crate::data::{ClusteredDataset, PopulationSample};
use crate::drm::cdf::sorted_quantiles;
use crate::drm::{cel_quantile, fit, fit_weighted, fitted_cdf, DrmFit, FitOptions};
use crate::error::{Error, Result};
use crate::rng::{stream, Domain};

/// Replicates allowed to fail before the bootstrap is declared unreliable.
pub const MAX_FAILED_FRACTION: f64 = 0.01;

const REFIT_MAX_ITER: usize = 100;
const REFIT_REL_TOL: f64 = 1e-8;

/// The functional of two quantiles under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phi {
    /// `xi_r - xi_s`
    Diff,
    /// `xi_r / xi_s`
    Ratio,
    /// `xi_r`
    Single,
}

impl Phi {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "diff" => Ok(Self::Diff),
            "ratio" => Ok(Self::Ratio),
            "single" => Ok(Self::Single),
            other => {
                Err(Error::InvalidArgument(format!("unknown functional {other:?} (expected diff, ratio or single)")))
            }
        }
    }

    pub fn apply(self, xi_r: f64, xi_s: f64) -> f64 {
        match self {
            Self::Diff => xi_r - xi_s,
            Self::Ratio => xi_r / xi_s,
            Self::Single => xi_r,
        }
    }

    /// The boundary of the null hypothesis `phi <= null`.
    pub fn null_value(self) -> f64 {
        match self {
            Self::Diff | Self::Single => 0.0,
            Self::Ratio => 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BootstrapPlan {
    pub b: usize,
    pub seed: u64,
    pub gamma: f64,
    pub phi: Phi,
    pub r: usize,
    pub s: usize,
    pub alpha: f64,
}

impl BootstrapPlan {
    /// Plan for `xi_{0,alpha} - xi_{k,alpha}`.
    pub fn difference(k: usize, alpha: f64, b: usize, seed: u64) -> Self {
        Self { b, seed, gamma: 0.05, phi: Phi::Diff, r: 0, s: k, alpha }
    }

    fn validate(&self, m: usize) -> Result<()> {
        if self.b == 0 {
            return Err(Error::InvalidArgument("the number of bootstrap replicates must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.r > m || self.s > m {
            return Err(Error::InvalidArgument(format!("population index outside 0..={m}")));
        }
        if self.phi != Phi::Single && self.r == self.s {
            return Err(Error::InvalidArgument("a two-population functional needs r != s".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapResult {
    pub point: f64,
    /// Successful replicates in replicate order.
    pub replicates: Vec<f64>,
    pub ci_two_sided: [f64; 2],
    /// Lower end of `[tau_gamma, infinity)`.
    pub ci_one_sided_lower: f64,
    pub p_value_one_sided: f64,
    pub n_failed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sided {
    One,
    Two,
}

#[derive(Debug, Clone, Serialize)]
pub struct MonitoringTestResult {
    pub hypothesis: String,
    pub reject: bool,
    pub sided: Sided,
    pub basis: String,
    pub alpha: f64,
    pub gamma: f64,
    pub result: BootstrapResult,
}

/// The `gamma` bootstrap quantile: order statistic `ceil(gamma (B + 1))`,
/// clamped to `1..=B`, of the sorted replicates.
pub fn percentile(sorted: &[f64], gamma: f64) -> f64 {
    assert!(!sorted.is_empty());
    let b = sorted.len();
    let rank = ((gamma * (b + 1) as f64).ceil() as usize).clamp(1, b);
    sorted[rank - 1]
}

/// How many times each cluster (global index, population-major) is drawn
/// in resample `index`.
pub fn cluster_multiplicities(ds: &ClusteredDataset, seed: u64, index: u64) -> Vec<u32> {
    let mut rng = stream(seed, Domain::Bootstrap, index);
    let mut counts = vec![0u32; ds.n_clusters()];
    let mut offset = 0;
    for p in ds.populations() {
        let nk = p.n_clusters();
        for _ in 0..nk {
            counts[offset + rng.random_range(0..nk)] += 1;
        }
        offset += nk;
    }
    counts
}

/// Resample `index`: `n_k` whole clusters drawn with replacement within each
/// population.
pub fn resample_clusters(ds: &ClusteredDataset, seed: u64, index: u64) -> ClusteredDataset {
    let mut rng = stream(seed, Domain::Bootstrap, index);
    let populations = ds
        .populations()
        .iter()
        .map(|p| {
            let nk = p.n_clusters();
            let clusters = (0..nk).map(|_| p.clusters()[rng.random_range(0..nk)].clone()).collect();
            PopulationSample::new(p.label(), clusters).expect("resampled clusters are valid")
        })
        .collect();
    ClusteredDataset::new(populations).expect("labels stay distinct")
}

/// Bootstrap quantiles `xi*_{r, alpha}` for every population and level.
#[derive(Debug, Clone)]
pub struct QuantileReplicates {
    /// `replicates[b][r * n_levels + a]`; failed replicates removed.
    pub replicates: Vec<Vec<f64>>,
    pub n_levels: usize,
    pub n_failed: usize,
}

impl QuantileReplicates {
    /// `xi*_{r, alphas[a]}` across successful replicates.
    pub fn column(&self, r: usize, a: usize) -> Vec<f64> {
        self.replicates.iter().map(|q| q[r * self.n_levels + a]).collect()
    }
}

/// Refit `b` cluster resamples of `ds`, warm-started at `fit` (which must be
/// a fit of `ds`), and record every population's quantiles at `alphas`.
pub fn bootstrap_quantiles(
    ds: &ClusteredDataset,
    fit: &DrmFit,
    alphas: &[f64],
    b: usize,
    seed: u64,
) -> Result<QuantileReplicates> {
    if b == 0 {
        return Err(Error::InvalidArgument("the number of bootstrap replicates must be positive".into()));
    }
    if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(Error::InvalidArgument("quantile levels must lie in (0, 1)".into()));
    }
    if ds.n_obs() != fit.n_obs() || ds.m() != fit.m() {
        return Err(Error::InvalidArgument("the fit does not belong to this dataset".into()));
    }
    let design = fit.design.clone();
    let m = design.m;
    let n = design.n();
    let init = design.theta_to_std(fit.theta_hat.as_slice());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| design.values[a].total_cmp(&design.values[c]));
    let na = alphas.len();

    let one = |index: usize| -> Option<Vec<f64>> {
        let counts = cluster_multiplicities(ds, seed, index as u64);
        let weights: Vec<f64> = design.cluster.iter().map(|&c| counts[c] as f64).collect();
        let wf = fit_weighted(&design, &weights, init.clone(), REFIT_MAX_ITER, REFIT_REL_TOL).ok()?;
        let mut out = vec![0.0; (m + 1) * na];
        for r in 0..=m {
            sorted_quantiles(
                &design.values,
                &order,
                |i| wf.mass(&weights, m, i, r),
                alphas,
                &mut out[r * na..(r + 1) * na],
            );
        }
        out.iter().all(|v| v.is_finite()).then_some(out)
    };
    let all: Vec<Option<Vec<f64>>> = (0..b).into_par_iter().map(one).collect();
    let n_failed = all.iter().filter(|r| r.is_none()).count();
    if n_failed as f64 > MAX_FAILED_FRACTION * b as f64 {
        return Err(Error::BootstrapUnreliable { failed: n_failed, total: b });
    }
    Ok(QuantileReplicates { replicates: all.into_iter().flatten().collect(), n_levels: na, n_failed })
}

/// Summarize replicates of a functional: percentile intervals and the
/// one-sided p-value `(1 + #{phi* <= null}) / (B + 1)`.
pub(crate) fn summarize(point: f64, replicates: Vec<f64>, gamma: f64, null: f64, n_failed: usize) -> BootstrapResult {
    let mut sorted = replicates.clone();
    sorted.sort_by(f64::total_cmp);
    let b = sorted.len();
    let below = sorted.partition_point(|&v| v <= null);
    BootstrapResult {
        point,
        ci_two_sided: [percentile(&sorted, gamma / 2.0), percentile(&sorted, 1.0 - gamma / 2.0)],
        ci_one_sided_lower: percentile(&sorted, gamma),
        p_value_one_sided: (1 + below) as f64 / (b + 1) as f64,
        replicates,
        n_failed,
    }
}

/// Refit `B` cluster resamples and collect `phi(xi*_r, xi*_s)`.
pub fn bootstrap_distribution(
    ds: &ClusteredDataset,
    basis: &BasisFunction,
    plan: &BootstrapPlan,
) -> Result<BootstrapResult> {
    plan.validate(ds.m())?;
    let f = fit(ds, basis, &FitOptions::default())?;
    bootstrap_from_fit(ds, &f, plan)
}

/// As [`bootstrap_distribution`], reusing an existing fit of `ds`.
pub fn bootstrap_from_fit(ds: &ClusteredDataset, f: &DrmFit, plan: &BootstrapPlan) -> Result<BootstrapResult> {
    plan.validate(ds.m())?;
    if !f.converged {
        return Err(Error::InvalidArgument("the original fit did not converge".into()));
    }
    let xi_r = cel_quantile(&fitted_cdf(f, plan.r)?, plan.alpha)?;
    let xi_s = cel_quantile(&fitted_cdf(f, plan.s)?, plan.alpha)?;
    let point = plan.phi.apply(xi_r, xi_s);
    let reps = bootstrap_quantiles(ds, f, &[plan.alpha], plan.b, plan.seed)?;
    let values = reps.replicates.iter().map(|q| plan.phi.apply(q[plan.r], q[plan.s])).collect();
    Ok(summarize(point, values, plan.gamma, plan.phi.null_value(), reps.n_failed))
}

/// Test `H0: phi <= null` against `Ha: phi > null` (one-sided: reject iff
/// `tau*_gamma > null`) or `H0: phi = null` (two-sided: reject iff the
/// percentile interval excludes `null`).
pub fn monitoring_test(
    ds: &ClusteredDataset,
    basis: &BasisFunction,
    plan: &BootstrapPlan,
    sided: Sided,
) -> Result<MonitoringTestResult> {
    let result = bootstrap_distribution(ds, basis, plan)?;
    let null = plan.phi.null_value();
    let reject = match sided {
        Sided::One => result.ci_one_sided_lower > null,
        Sided::Two => !(result.ci_two_sided[0] <= null && null <= result.ci_two_sided[1]),
    };
    let labels: Vec<&str> = ds.populations().iter().map(|p| p.label()).collect();
    let (lr, ls) = (labels[plan.r], labels[plan.s]);
    let a = plan.alpha;
    let lhs = match plan.phi {
        Phi::Diff => format!("xi[{lr}]({a}) - xi[{ls}]({a})"),
        Phi::Ratio => format!("xi[{lr}]({a}) / xi[{ls}]({a})"),
        Phi::Single => format!("xi[{lr}]({a})"),
    };
    let hypothesis = match sided {
        Sided::One => format!("H0: {lhs} <= {null} vs Ha: {lhs} > {null}"),
        Sided::Two => format!("H0: {lhs} = {null} vs Ha: {lhs} != {null}"),
    };
    Ok(MonitoringTestResult {
        hypothesis,
        reject,
        sided,
        basis: basis.name().to_string(),
        alpha: plan.alpha,
        gamma: plan.gamma,
        result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_pops(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> ClusteredDataset {
        ClusteredDataset::new(vec![
            PopulationSample::from_vecs("0", a).unwrap(),
            PopulationSample::from_vecs("1", b).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn percentile_convention() {
        let v: Vec<f64> = (1..=999).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.05), 50.0);
        assert_eq!(percentile(&v, 0.025), 25.0);
        assert_eq!(percentile(&v, 0.975), 975.0);
        assert_eq!(percentile(&[3.0], 0.5), 3.0);
        assert_eq!(percentile(&[1.0, 2.0], 0.01), 1.0);
        assert_eq!(percentile(&[1.0, 2.0], 0.99), 2.0);
    }

    #[test]
    fn single_cluster_population_resamples_to_itself() {
        let ds = two_pops(vec![vec![1.0, 2.0, 3.0]], vec![vec![4.0], vec![5.0]]);
        for b in 0..20 {
            let r = resample_clusters(&ds, 11, b);
            assert_eq!(r.population(0), ds.population(0));
            assert_eq!(r.population(1).n_clusters(), 2);
        }
    }

    #[test]
    fn multiplicities_agree_with_materialized_resample() {
        let ds = two_pops(vec![vec![1.0], vec![2.0], vec![3.0]], vec![vec![4.0], vec![5.0], vec![6.0], vec![7.0]]);
        for b in 0..20 {
            let counts = cluster_multiplicities(&ds, 5, b);
            let r = resample_clusters(&ds, 5, b);
            let mut expected: Vec<f64> = Vec::new();
            let all: Vec<f64> = ds.pooled_values();
            for (c, &k) in counts.iter().enumerate() {
                expected.extend(std::iter::repeat_n(all[c], k as usize));
            }
            let mut got = r.pooled_values();
            got.sort_by(f64::total_cmp);
            expected.sort_by(f64::total_cmp);
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn weighted_refit_equals_materialized_refit() {
        let a: Vec<Vec<f64>> = (0..8).map(|j| vec![1.0 + 0.3 * j as f64, 2.2 - 0.1 * j as f64]).collect();
        let b: Vec<Vec<f64>> = (0..9).map(|j| vec![1.4 + 0.25 * j as f64, 1.9 + 0.05 * j as f64]).collect();
        let ds = two_pops(a, b);
        let basis = BasisFunction::linear_quadratic();
        let f = fit(&ds, &basis, &FitOptions::default()).unwrap();
        let design = f.design.clone();
        let init = design.theta_to_std(f.theta_hat.as_slice());
        for index in 0..10 {
            let counts = cluster_multiplicities(&ds, 9, index);
            let weights: Vec<f64> = design.cluster.iter().map(|&c| counts[c] as f64).collect();
            let wf = fit_weighted(&design, &weights, init.clone(), 100, 1e-12).unwrap();
            let theta_w = design.theta_to_raw(&wf.theta_std);
            let resample = resample_clusters(&ds, 9, index);
            let fm = fit(
                &resample,
                &basis,
                &FitOptions { tol: Some(1e-12 * resample.n_obs() as f64), ..Default::default() },
            )
            .unwrap();
            for (x, y) in theta_w.iter().zip(fm.theta_hat.as_slice()) {
                assert!((x - y).abs() < 1e-6 * (1.0 + y.abs()), "{theta_w:?} vs {:?}", fm.theta_hat);
            }
            let mut q = [0.0; 2];
            let mut order: Vec<usize> = (0..design.n()).collect();
            order.sort_by(|&i, &j| design.values[i].total_cmp(&design.values[j]));
            sorted_quantiles(&design.values, &order, |i| wf.mass(&weights, 1, i, 1), &[0.1, 0.5], &mut q);
            let cdf = fitted_cdf(&fm, 1).unwrap();
            assert_eq!(q, [cel_quantile(&cdf, 0.1).unwrap(), cel_quantile(&cdf, 0.5).unwrap()]);
        }
    }

    #[test]
    fn constant_data_never_rejects() {
        let c = vec![vec![2.5; 3]; 6];
        let ds = two_pops(c.clone(), c);
        let plan = BootstrapPlan::difference(1, 0.05, 99, 3);
        let t = monitoring_test(&ds, &BasisFunction::linear_quadratic(), &plan, Sided::One).unwrap();
        assert!(!t.reject);
        assert!(t.result.replicates.iter().all(|&v| v == 0.0));
        assert_eq!(t.result.ci_two_sided, [0.0, 0.0]);
        assert_eq!(t.result.p_value_one_sided, 1.0);
    }

    #[test]
    fn p_value_and_interval_agree() {
        for shift in [-0.5, 0.0, 0.5, 1.0, 3.0] {
            let reps: Vec<f64> = (0..999).map(|i| (i as f64 * 0.7).sin() + shift).collect();
            let res = summarize(0.0, reps, 0.05, 0.0, 0);
            assert_eq!(res.ci_one_sided_lower > 0.0, res.p_value_one_sided <= 0.05, "shift {shift}");
        }
    }

    #[test]
    fn plan_validation() {
        let ds = two_pops(vec![vec![1.0]], vec![vec![2.0]]);
        let basis = BasisFunction::linear();
        let mut plan = BootstrapPlan::difference(1, 0.05, 0, 1);
        assert!(bootstrap_distribution(&ds, &basis, &plan).is_err());
        plan.b = 10;
        plan.s = 0;
        assert!(bootstrap_distribution(&ds, &basis, &plan).is_err());
        plan.s = 2;
        assert!(bootstrap_distribution(&ds, &basis, &plan).is_err());
    }
}
