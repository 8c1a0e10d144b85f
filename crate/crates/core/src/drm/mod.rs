//! Composite empirical likelihood under the density ratio model.
//!
//! Populations `G_0, ..., G_m` are linked by `dG_k / dG_0 = exp{theta_k' q(y)}`
//! and `G_0` is restricted to the pooled observations. Clusters are ignored by
//! the likelihood itself (it is a composite of the marginals); they matter
//! only for inference, through the cluster bootstrap.

pub(crate) mod cdf;
pub(crate) mod engine;

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

pub use cdf::{cel_quantile, FittedCdf};

use crate::basis::BasisFunction;
use crate::data::ClusteredDataset;
use crate::error::{Error, Result};
use engine::{Design, NewtonOptions, Order};

/// `theta_1, ..., theta_m`, each a block of `q` reals. `theta_0 = 0` is
/// implicit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DrmParameters {
    m: usize,
    q: usize,
    theta: Vec<f64>,
}

impl DrmParameters {
    pub fn zeros(m: usize, q: usize) -> Self {
        Self { m, q, theta: vec![0.0; m * q] }
    }

    pub fn from_flat(m: usize, q: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != m * q {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters for m = {m}, q = {q}, got {}",
                m * q,
                theta.len()
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("parameters must be finite".into()));
        }
        Ok(Self { m, q, theta })
    }

    pub fn from_blocks(blocks: &[Vec<f64>]) -> Result<Self> {
        let q = blocks.first().map_or(0, Vec::len);
        if blocks.iter().any(|b| b.len() != q) {
            return Err(Error::InvalidArgument("parameter blocks differ in length".into()));
        }
        Self::from_flat(blocks.len(), q, blocks.concat())
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    /// Block `r` for `1 <= r <= m`.
    pub fn block(&self, r: usize) -> &[f64] {
        assert!(r >= 1 && r <= self.m, "block index {r} outside 1..={}", self.m);
        &self.theta[(r - 1) * self.q..r * self.q]
    }

    pub fn blocks(&self) -> Vec<Vec<f64>> {
        self.theta.chunks(self.q.max(1)).map(<[f64]>::to_vec).collect()
    }

    fn check_shape(&self, design: &Design) -> Result<()> {
        if self.m != design.m || self.q != design.q {
            return Err(Error::InvalidArgument(format!(
                "parameters have shape m = {}, q = {} but the data need m = {}, q = {}",
                self.m, self.q, design.m, design.q
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Gradient-norm tolerance; defaults to `1e-8 * nd`.
    pub tol: Option<f64>,
    pub max_iter: usize,
    pub init: Option<DrmParameters>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { tol: None, max_iter: 200, init: None }
    }
}

/// The maximum composite EL fit.
#[derive(Debug, Clone)]
pub struct DrmFit {
    pub theta_hat: DrmParameters,
    /// `p_{k,j,l}`, in the dataset's `(k, j, l)` order.
    pub weights: Vec<f64>,
    pub rho: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    pub(crate) design: Arc<Design>,
    /// `n x (m+1)` matrix of `h_r(y_i; theta_hat)`.
    pub(crate) h: Vec<f64>,
    pub(crate) basis: BasisFunction,
}

impl DrmFit {
    pub fn m(&self) -> usize {
        self.design.m
    }

    pub fn basis(&self) -> &BasisFunction {
        &self.basis
    }

    pub fn n_obs(&self) -> usize {
        self.design.n()
    }

    /// Observation values in the dataset's `(k, j, l)` order.
    pub fn values(&self) -> &[f64] {
        &self.design.values
    }

    /// `h_r(y_i; theta_hat) = rho_r exp(theta_r' q) / sum_s rho_s exp(theta_s' q)`.
    pub fn h(&self, i: usize, r: usize) -> f64 {
        self.h[i * (self.design.m + 1) + r]
    }

    /// Jump of `G_r` at observation `i`: `p_i exp{theta_r' q(y_i)}`.
    pub fn mass(&self, i: usize, r: usize) -> f64 {
        self.h(i, r) / (self.design.n() as f64 * self.rho[r])
    }

    /// `sum_i p_i exp{theta_r' q(y_i)}`, which the fit makes equal to one.
    pub fn constraint_sum(&self, r: usize) -> f64 {
        (0..self.n_obs()).map(|i| self.mass(i, r)).sum()
    }

    /// Constraint sums computed literally from the reported weights and
    /// parameters in the original basis.
    pub fn constraint_sum_direct(&self, r: usize) -> f64 {
        let q = self.design.q;
        self.weights
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let eta = if r == 0 {
                    0.0
                } else {
                    let x = &self.design.raw[i * q..(i + 1) * q];
                    self.theta_hat.block(r).iter().zip(x).map(|(t, x)| t * x).sum()
                };
                p * f64::exp(eta)
            })
            .sum()
    }
}

fn prepare(ds: &ClusteredDataset, basis: &BasisFunction) -> Result<Design> {
    Design::new(ds, basis)
}

/// The profile log composite EL `l_n(theta)`.
pub fn profile_log_cel(ds: &ClusteredDataset, basis: &BasisFunction, theta: &DrmParameters) -> Result<f64> {
    let design = prepare(ds, basis)?;
    theta.check_shape(&design)?;
    let log_rho: Vec<f64> = ds.rho().iter().map(|r| r.ln()).collect();
    engine::evaluate(&design, &design.raw, None, &log_rho, theta.as_slice(), Order::Value, None).map(|e| e.loglik)
}

/// `d l_n / d theta`, blocks `1..=m` stacked.
pub fn gradient(ds: &ClusteredDataset, basis: &BasisFunction, theta: &DrmParameters) -> Result<Vec<f64>> {
    let design = prepare(ds, basis)?;
    theta.check_shape(&design)?;
    let log_rho: Vec<f64> = ds.rho().iter().map(|r| r.ln()).collect();
    engine::evaluate(&design, &design.raw, None, &log_rho, theta.as_slice(), Order::Gradient, None).map(|e| e.gradient)
}

/// Analytic Hessian of `l_n`; its `(r, s)` block is
/// `-sum_i q q' {h_r delta_rs - h_r h_s}`.
pub fn hessian(ds: &ClusteredDataset, basis: &BasisFunction, theta: &DrmParameters) -> Result<DMatrix<f64>> {
    let design = prepare(ds, basis)?;
    theta.check_shape(&design)?;
    let log_rho: Vec<f64> = ds.rho().iter().map(|r| r.ln()).collect();
    engine::evaluate(&design, &design.raw, None, &log_rho, theta.as_slice(), Order::Hessian, None).map(|e| e.hessian())
}

/// Maximize `l_n` and derive the EL weights.
pub fn fit(ds: &ClusteredDataset, basis: &BasisFunction, options: &FitOptions) -> Result<DrmFit> {
    if ds.m() == 0 {
        return Err(Error::InvalidArgument("fitting needs at least two populations".into()));
    }
    let design = Arc::new(prepare(ds, basis)?);
    fit_design(design, basis.clone(), ds.rho(), options)
}

pub(crate) fn fit_design(
    design: Arc<Design>,
    basis: BasisFunction,
    rho: Vec<f64>,
    options: &FitOptions,
) -> Result<DrmFit> {
    let n = design.n();
    let init = match &options.init {
        Some(p) => {
            p.check_shape(&design)?;
            design.theta_to_std(p.as_slice())
        }
        None => vec![0.0; design.dim()],
    };
    let tol = options.tol.unwrap_or(1e-8 * n as f64);
    let res =
        engine::maximize(&design, None, &rho, init, &NewtonOptions { tol, max_iter: options.max_iter, polish: true })?;
    let mp1 = design.m + 1;
    let weights: Vec<f64> = (0..n).map(|i| res.h[i * mp1] / (n as f64 * rho[0])).collect();
    let theta_hat = DrmParameters { m: design.m, q: design.q, theta: design.theta_to_raw(&res.theta) };
    Ok(DrmFit {
        theta_hat,
        weights,
        rho,
        loglik: res.loglik,
        iterations: res.iterations,
        gradient_norm: res.gradient_norm,
        converged: true,
        design,
        h: res.h,
        basis,
    })
}

/// A fit in which observation `i` counts `weights[i]` times; `rho` is
/// recomputed from the weighted counts.
pub(crate) struct WeightedFit {
    #[cfg_attr(not(test), allow(dead_code))]
    pub theta_std: Vec<f64>,
    pub h: Vec<f64>,
    pub rho: Vec<f64>,
    pub total_weight: f64,
}

impl WeightedFit {
    /// Jump of `G_r` at observation `i`.
    #[inline]
    pub fn mass(&self, weights: &[f64], m: usize, i: usize, r: usize) -> f64 {
        weights[i] * self.h[i * (m + 1) + r] / (self.total_weight * self.rho[r])
    }
}

pub(crate) fn fit_weighted(
    design: &Design,
    weights: &[f64],
    init_std: Vec<f64>,
    max_iter: usize,
    rel_tol: f64,
) -> Result<WeightedFit> {
    let mut rho = vec![0.0; design.m + 1];
    for (&k, &w) in design.pop.iter().zip(weights) {
        rho[k] += w;
    }
    let total_weight: f64 = rho.iter().sum();
    if rho.iter().any(|&r| r <= 0.0) {
        return Err(Error::InvalidData("a population has no observations in the resample".into()));
    }
    rho.iter_mut().for_each(|r| *r /= total_weight);
    let tol = rel_tol * total_weight;
    let res = engine::maximize(design, Some(weights), &rho, init_std, &NewtonOptions { tol, max_iter, polish: false })?;
    Ok(WeightedFit { theta_std: res.theta, h: res.h, rho, total_weight })
}

/// The fitted distribution `G_r` as a weighted step function.
pub fn fitted_cdf(fit: &DrmFit, r: usize) -> Result<FittedCdf> {
    if r > fit.m() {
        return Err(Error::InvalidArgument(format!("population index {r} exceeds m = {}", fit.m())));
    }
    let masses: Vec<f64> = (0..fit.n_obs()).map(|i| fit.mass(i, r)).collect();
    Ok(FittedCdf::from_masses(fit.values(), &masses, r))
}

/// `G_r` with all parameters frozen at zero: the pooled empirical CDF.
pub fn pooled_empirical_cdf(ds: &ClusteredDataset) -> FittedCdf {
    let values = ds.pooled_values();
    let w = 1.0 / values.len() as f64;
    FittedCdf::from_masses(&values, &vec![w; values.len()], 0)
}
