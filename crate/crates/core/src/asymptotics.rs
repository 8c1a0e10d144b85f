//! Plug-in estimates of the limiting covariances of the fitted CDFs and of
//! the composite EL quantiles.
//!
//! Integrals against the pooled mixture `sum_k rho_k G_k` become averages
//! over all `N` observations evaluated at `theta_hat`. With `n` the total
//! number of clusters, `Var(G_r(x)) ~ omega_rr(x, x) / n` and
//! `Var(xi_r) ~ sigma_rr / n`.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::data::ClusteredDataset;
use crate::drm::engine::Design;
use crate::drm::{cel_quantile, fitted_cdf, DrmFit, DrmParameters};
use crate::error::{Error, Result};
use crate::kde::GaussianKde;
use crate::BasisFunction;

pub struct AsymptoticComponents {
    design: Arc<Design>,
    h: Vec<f64>,
    rho: Vec<f64>,
    theta: DrmParameters,
    basis: BasisFunction,
    w: DMatrix<f64>,
    w_chol: Cholesky<f64, Dyn>,
    /// Set when cluster sizes differ; the covariance then sums each
    /// cluster's own pairs.
    pub warnings: Vec<String>,
}

impl std::fmt::Debug for AsymptoticComponents {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AsymptoticComponents").field("w", &self.w).field("warnings", &self.warnings).finish()
    }
}

/// Estimate `W`, `B_r(y)` and `h_k(y)` at the fitted parameter.
pub fn estimate_components(ds: &ClusteredDataset, fit: &DrmFit) -> Result<AsymptoticComponents> {
    let design = fit.design.clone();
    if ds.n_obs() != design.n() || ds.m() != design.m {
        return Err(Error::InvalidArgument("fit does not belong to this dataset".into()));
    }
    let (m, q, n) = (design.m, design.q, design.n());
    let mq = m * q;
    let mut w = DMatrix::<f64>::zeros(mq, mq);
    for i in 0..n {
        let x = &design.raw[i * q..(i + 1) * q];
        for r in 1..=m {
            let hr = fit.h(i, r);
            for s in 1..=m {
                let coef = if r == s { hr } else { 0.0 } - hr * fit.h(i, s);
                for a in 0..q {
                    for b in 0..q {
                        w[((r - 1) * q + a, (s - 1) * q + b)] += coef * x[a] * x[b];
                    }
                }
            }
        }
    }
    w /= n as f64;
    let w_chol = w
        .clone()
        .cholesky()
        .ok_or_else(|| Error::DegenerateBasis("the information matrix W is numerically singular".into()))?;
    let eig = w.clone().symmetric_eigenvalues();
    let max = eig.max();
    if !(eig.min() > 1e-12 * max) {
        return Err(Error::DegenerateBasis("the information matrix W is numerically singular".into()));
    }

    let mut warnings = Vec::new();
    if ds.common_cluster_size().is_none() {
        warnings.push(format!(
            "cluster sizes differ (mean {:.3}); covariance sums within-cluster pairs per cluster",
            ds.mean_cluster_size()
        ));
    }
    Ok(AsymptoticComponents {
        design,
        h: fit.h.clone(),
        rho: fit.rho.clone(),
        theta: fit.theta_hat.clone(),
        basis: fit.basis().clone(),
        w,
        w_chol,
        warnings,
    })
}

impl AsymptoticComponents {
    pub fn m(&self) -> usize {
        self.design.m
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    #[inline]
    fn h_obs(&self, i: usize, r: usize) -> f64 {
        self.h[i * (self.design.m + 1) + r]
    }

    /// `(h_0(y), ..., h_m(y))` at any `y` in the basis domain.
    pub fn h_all(&self, y: f64) -> Vec<f64> {
        let m = self.design.m;
        let qy = self.basis.eval(y);
        let mut a = vec![self.rho[0].ln(); m + 1];
        for r in 1..=m {
            a[r] = self.rho[r].ln() + self.theta.block(r).iter().zip(&qy).map(|(t, x)| t * x).sum::<f64>();
        }
        let mx = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = a.iter().map(|v| (v - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    /// `H(y) = (h_1(y), ..., h_m(y))`.
    pub fn big_h(&self, y: f64) -> Vec<f64> {
        self.h_all(y)[1..].to_vec()
    }

    pub fn hk(&self, k: usize, y: f64) -> f64 {
        self.h_all(y)[k]
    }

    /// `B_r(y)`: segment `s` is the average of
    /// `{delta_rs h_r - h_r h_s} q 1(y_i <= y)` over all observations.
    pub fn b(&self, r: usize, y: f64) -> DVector<f64> {
        let d = &self.design;
        let (m, q, n) = (d.m, d.q, d.n());
        let mut out = DVector::zeros(m * q);
        for i in (0..n).filter(|&i| d.values[i] <= y) {
            let x = &d.raw[i * q..(i + 1) * q];
            let hr = self.h_obs(i, r);
            for s in 1..=m {
                let coef = if r == s { hr } else { 0.0 } - hr * self.h_obs(i, s);
                for a in 0..q {
                    out[(s - 1) * q + a] += coef * x[a];
                }
            }
        }
        out / n as f64
    }

    /// `gamma_{r,k(i)}(y_i; y)` for every observation `i`.
    fn gamma(&self, r: usize, y: f64) -> Vec<f64> {
        let d = &self.design;
        let (m, q) = (d.m, d.q);
        let v = self.w_chol.solve(&self.b(r, y));
        (0..d.n())
            .map(|i| {
                let x = &d.raw[i * q..(i + 1) * q];
                let k = d.pop[i];
                let mut g = if d.values[i] <= y { self.h_obs(i, r) } else { 0.0 };
                for s in 1..=m {
                    let e = if k == s { 1.0 } else { 0.0 } - self.h_obs(i, s);
                    let vx: f64 = v.rows((s - 1) * q, q).iter().zip(x).map(|(a, b)| a * b).sum();
                    g += e * vx;
                }
                g
            })
            .collect()
    }

    /// Per-cluster sums of `gamma`, centered within each population.
    fn centered_cluster_sums(&self, gamma: &[f64]) -> Vec<f64> {
        let d = &self.design;
        let n_clusters = d.cluster_pop.len();
        let mut sums = vec![0.0; n_clusters];
        for (i, g) in gamma.iter().enumerate() {
            sums[d.cluster[i]] += g;
        }
        let mut mean = vec![0.0; d.m + 1];
        let mut count = vec![0usize; d.m + 1];
        for (c, s) in sums.iter().enumerate() {
            mean[d.cluster_pop[c]] += s;
            count[d.cluster_pop[c]] += 1;
        }
        for (mu, c) in mean.iter_mut().zip(&count) {
            *mu /= *c as f64;
        }
        for (c, s) in sums.iter_mut().enumerate() {
            *s -= mean[d.cluster_pop[c]];
        }
        sums
    }

    /// `omega_rs(x, y)`, the limiting covariance of `sqrt(n) G_r(x)` and
    /// `sqrt(n) G_s(y)`.
    pub fn omega(&self, r: usize, s: usize, x: f64, y: f64) -> Result<f64> {
        let m = self.design.m;
        if r > m || s > m {
            return Err(Error::InvalidArgument(format!("population index outside 0..={m}")));
        }
        let a = self.centered_cluster_sums(&self.gamma(r, x));
        let b = if r == s && x == y { a.clone() } else { self.centered_cluster_sums(&self.gamma(s, y)) };
        let n_obs = self.design.n() as f64;
        let n_clusters = self.design.cluster_pop.len() as f64;
        let cross: f64 = a.iter().zip(&b).map(|(u, v)| u * v).sum();
        Ok(n_clusters * cross / (n_obs * n_obs * self.rho[r] * self.rho[s]))
    }

    pub fn n_clusters(&self) -> usize {
        self.design.cluster_pop.len()
    }
}

/// Free-function form of [`AsymptoticComponents::omega`].
pub fn omega(components: &AsymptoticComponents, r: usize, s: usize, x: f64, y: f64) -> Result<f64> {
    components.omega(r, s, x, y)
}

#[derive(Debug, Clone)]
pub struct QuantileCovariance {
    /// Quantile level per population.
    pub alphas: Vec<f64>,
    pub quantiles: Vec<f64>,
    /// `g_r(xi_r)`, by weighted kernel smoothing of the fitted masses.
    pub density_at_quantile: Vec<f64>,
    /// `(m+1) x (m+1)` matrix of `sigma_rs`.
    pub sigma: DMatrix<f64>,
    /// Total number of clusters `n`.
    pub n_clusters: usize,
}

impl QuantileCovariance {
    /// The 2 x 2 matrix `Sigma_rs`.
    pub fn pair(&self, r: usize, s: usize) -> [[f64; 2]; 2] {
        [[self.sigma[(r, r)], self.sigma[(r, s)]], [self.sigma[(s, r)], self.sigma[(s, s)]]]
    }

    /// Approximate `Var(xi_r)`.
    pub fn variance(&self, r: usize) -> f64 {
        self.sigma[(r, r)] / self.n_clusters as f64
    }

    /// Approximate `Var(xi_r - xi_s)`.
    pub fn difference_variance(&self, r: usize, s: usize) -> f64 {
        (self.sigma[(r, r)] + self.sigma[(s, s)] - 2.0 * self.sigma[(r, s)]) / self.n_clusters as f64
    }
}

/// `Sigma` at the fitted quantiles. `alphas` holds one level for all
/// populations or one per population.
pub fn quantile_covariance(
    components: &AsymptoticComponents,
    fit: &DrmFit,
    alphas: &[f64],
) -> Result<QuantileCovariance> {
    let m = fit.m();
    let alphas: Vec<f64> = match alphas.len() {
        1 => vec![alphas[0]; m + 1],
        l if l == m + 1 => alphas.to_vec(),
        l => {
            return Err(Error::InvalidArgument(format!("expected 1 or {} quantile levels, got {l}", m + 1)));
        }
    };
    let n_obs = fit.n_obs();
    let mut quantiles = Vec::with_capacity(m + 1);
    let mut density = Vec::with_capacity(m + 1);
    for r in 0..=m {
        let xi = cel_quantile(&fitted_cdf(fit, r)?, alphas[r])?;
        let masses: Vec<f64> = (0..n_obs).map(|i| fit.mass(i, r)).collect();
        let g = GaussianKde::weighted(fit.values(), &masses, n_obs)?.density(xi);
        if !(g >= 1e-8) {
            return Err(Error::DensityTooSmall { at: xi, value: g });
        }
        quantiles.push(xi);
        density.push(g);
    }
    let mut sigma = DMatrix::zeros(m + 1, m + 1);
    for r in 0..=m {
        for s in 0..=r {
            let v = components.omega(r, s, quantiles[r], quantiles[s])? / (density[r] * density[s]);
            sigma[(r, s)] = v;
            sigma[(s, r)] = v;
        }
    }
    Ok(QuantileCovariance {
        alphas,
        quantiles,
        density_at_quantile: density,
        sigma,
        n_clusters: components.n_clusters(),
    })
}
