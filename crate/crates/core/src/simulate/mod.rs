//! Clustered data generators for the normal and multivariate-gamma
//! random-effects models, their true quantiles, and the Monte Carlo study
//! engine.

mod study;

pub use study::{run_study, AmseCell, Method, RateCell, StudyConfig, StudyKind, StudyReport, Target};

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::gamma_lr;

use crate::basis::BasisFunction;
use crate::data::{ClusteredDataset, PopulationSample};
use crate::error::{Error, Result};
use crate::rng::{stream, Domain};

/// `y_kij = mu_k + gamma_ki + eps_kij` with independent normal random
/// effects and errors; the `sigma2_*` fields are variances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalREConfig {
    pub mu: Vec<f64>,
    pub sigma2_gamma: Vec<f64>,
    pub sigma2_eps: Vec<f64>,
    pub n: Vec<usize>,
    pub d: usize,
}

/// Clusters `W (U_1, ..., U_d)` with `U_l ~ Beta(a_k, b)` iid and
/// `W ~ Gamma(shape a_k + b, rate beta_k)`; margins are `Gamma(a_k, beta_k)`
/// and within-cluster correlation is `a_k / (a_k + b)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaREConfig {
    pub a: Vec<f64>,
    pub b: f64,
    pub beta: Vec<f64>,
    pub n: Vec<usize>,
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelConfig {
    Normal(NormalREConfig),
    Gamma(GammaREConfig),
}

fn check_lengths(name: &str, lens: &[usize]) -> Result<()> {
    if lens.iter().any(|&l| l != lens[0]) || lens[0] == 0 {
        return Err(Error::InvalidArgument(format!("{name}: parameter vectors must be nonempty and equally long")));
    }
    Ok(())
}

impl NormalREConfig {
    pub fn validate(&self) -> Result<()> {
        check_lengths("normal model", &[self.mu.len(), self.sigma2_gamma.len(), self.sigma2_eps.len(), self.n.len()])?;
        let ok = self.sigma2_gamma.iter().chain(&self.sigma2_eps).all(|v| *v >= 0.0 && v.is_finite())
            && self.mu.iter().all(|v| v.is_finite());
        if !ok {
            return Err(Error::InvalidArgument("normal model: variances must be finite and nonnegative".into()));
        }
        if self.d == 0 || self.n.contains(&0) {
            return Err(Error::InvalidArgument("normal model: cluster counts and size must be positive".into()));
        }
        Ok(())
    }
}

impl GammaREConfig {
    pub fn validate(&self) -> Result<()> {
        check_lengths("gamma model", &[self.a.len(), self.beta.len(), self.n.len()])?;
        let ok = self.a.iter().chain(&self.beta).chain(std::iter::once(&self.b)).all(|v| *v > 0.0 && v.is_finite());
        if !ok {
            return Err(Error::InvalidArgument("gamma model: a, b and beta must be positive and finite".into()));
        }
        if self.d == 0 || self.n.contains(&0) {
            return Err(Error::InvalidArgument("gamma model: cluster counts and size must be positive".into()));
        }
        Ok(())
    }
}

fn labels(m1: usize) -> impl Iterator<Item = String> {
    (0..m1).map(|k| k.to_string())
}

/// One dataset from the normal random-effects model.
pub fn gen_normal_re(cfg: &NormalREConfig, seed: u64) -> Result<ClusteredDataset> {
    cfg.validate()?;
    let mut rng = stream(seed, Domain::Data, 0);
    let pops = labels(cfg.mu.len())
        .enumerate()
        .map(|(k, label)| {
            let (sg, se) = (cfg.sigma2_gamma[k].sqrt(), cfg.sigma2_eps[k].sqrt());
            let clusters = (0..cfg.n[k])
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    let center = cfg.mu[k] + sg * z;
                    (0..cfg.d)
                        .map(|_| {
                            let e: f64 = rng.sample(StandardNormal);
                            center + se * e
                        })
                        .collect()
                })
                .collect();
            PopulationSample::from_vecs(label, clusters)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusteredDataset::new(pops)?.with_nominal_cluster_size(cfg.d))
}

/// One dataset from the multivariate-gamma random-effects model.
pub fn gen_gamma_re(cfg: &GammaREConfig, seed: u64) -> Result<ClusteredDataset> {
    cfg.validate()?;
    let mut rng = stream(seed, Domain::Data, 0);
    let pops = labels(cfg.a.len())
        .enumerate()
        .map(|(k, label)| {
            let beta = Beta::new(cfg.a[k], cfg.b).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let gamma =
                Gamma::new(cfg.a[k] + cfg.b, 1.0 / cfg.beta[k]).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let clusters = (0..cfg.n[k])
                .map(|_| {
                    let w = gamma.sample(&mut rng);
                    (0..cfg.d).map(|_| w * beta.sample(&mut rng)).collect()
                })
                .collect();
            PopulationSample::from_vecs(label, clusters)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusteredDataset::new(pops)?.with_nominal_cluster_size(cfg.d))
}

/// `alpha`-quantile of `Gamma(shape, rate)` by bisection on the regularized
/// lower incomplete gamma function.
pub fn gamma_quantile(shape: f64, rate: f64, alpha: f64) -> f64 {
    let cdf = |x: f64| gamma_lr(shape, rate * x);
    let mut hi = shape / rate;
    while cdf(hi) < alpha {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-12 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Normal(c) => c.validate(),
            Self::Gamma(c) => c.validate(),
        }
    }

    pub fn generate(&self, seed: u64) -> Result<ClusteredDataset> {
        match self {
            Self::Normal(c) => gen_normal_re(c, seed),
            Self::Gamma(c) => gen_gamma_re(c, seed),
        }
    }

    /// `(1, y, y^2)` for the normal model, `(1, y, log y)` for the gamma
    /// model; both satisfy the density ratio model exactly.
    pub fn basis(&self) -> BasisFunction {
        match self {
            Self::Normal(_) => BasisFunction::linear_quadratic(),
            Self::Gamma(_) => BasisFunction::linear_log(),
        }
    }

    pub fn n_populations(&self) -> usize {
        match self {
            Self::Normal(c) => c.mu.len(),
            Self::Gamma(c) => c.a.len(),
        }
    }

    pub fn cluster_size(&self) -> usize {
        match self {
            Self::Normal(c) => c.d,
            Self::Gamma(c) => c.d,
        }
    }

    pub fn with_cluster_size(&self, d: usize) -> Self {
        let mut out = self.clone();
        match &mut out {
            Self::Normal(c) => c.d = d,
            Self::Gamma(c) => c.d = d,
        }
        out
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Normal(_) => "normal",
            Self::Gamma(_) => "gamma",
        }
    }
}

/// `xi_{k, alpha}` for every population.
pub fn true_quantiles(cfg: &ModelConfig, alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile level must lie in (0, 1), got {alpha}")));
    }
    cfg.validate()?;
    Ok(match cfg {
        ModelConfig::Normal(c) => {
            let z = Normal::standard().inverse_cdf(alpha);
            (0..c.mu.len()).map(|k| c.mu[k] + z * (c.sigma2_gamma[k] + c.sigma2_eps[k]).sqrt()).collect()
        }
        ModelConfig::Gamma(c) => (0..c.a.len()).map(|k| gamma_quantile(c.a[k], c.beta[k], alpha)).collect(),
    })
}

const NORMAL_MU: [f64; 4] = [15.5, 15.5, 14.7, 14.0];
const NORMAL_SIGMA2_EPS: f64 = 4.0;
const GAMMA_A: [f64; 4] = [8.0, 8.0, 7.0, 6.0];
const GAMMA_BETA: [f64; 4] = [1.0, 1.0, 1.05, 1.1];
const SMALL_N: [usize; 4] = [25, 30, 40, 40];
const LARGE_N: [usize; 4] = [38, 45, 60, 60];

/// The four-population normal model with the given cluster counts and
/// random-effect variances.
pub fn normal_model(n: [usize; 4], sigma2_gamma: [f64; 4], d: usize) -> ModelConfig {
    ModelConfig::Normal(NormalREConfig {
        mu: NORMAL_MU.to_vec(),
        sigma2_gamma: sigma2_gamma.to_vec(),
        sigma2_eps: vec![NORMAL_SIGMA2_EPS; 4],
        n: n.to_vec(),
        d,
    })
}

/// The four-population gamma model with the given cluster counts and `b`.
pub fn gamma_model(n: [usize; 4], b: f64, d: usize) -> ModelConfig {
    ModelConfig::Gamma(GammaREConfig { a: GAMMA_A.to_vec(), b, beta: GAMMA_BETA.to_vec(), n: n.to_vec(), d })
}

/// Parameter block `1..=4` of the normal tables.
pub fn normal_block(block: usize, d: usize) -> Result<ModelConfig> {
    let high = [1.44, 1.44, 1.0, 1.0];
    let low = [0.36, 0.36, 0.25, 0.25];
    Ok(match block {
        1 => normal_model(SMALL_N, high, d),
        2 => normal_model(SMALL_N, low, d),
        3 => normal_model(LARGE_N, high, d),
        4 => normal_model(LARGE_N, low, d),
        _ => return Err(Error::InvalidArgument(format!("block must be 1..=4, got {block}"))),
    })
}

/// Parameter block `1..=4` of the gamma tables.
pub fn gamma_block(block: usize, d: usize) -> Result<ModelConfig> {
    Ok(match block {
        1 => gamma_model(SMALL_N, 14.0, d),
        2 => gamma_model(SMALL_N, 63.0, d),
        3 => gamma_model(LARGE_N, 14.0, d),
        4 => gamma_model(LARGE_N, 63.0, d),
        _ => return Err(Error::InvalidArgument(format!("block must be 1..=4, got {block}"))),
    })
}

/// Gamma populations whose 10% quantiles nearly coincide while the second
/// is stochastically smaller in the rank sense.
pub fn counterexample1(d: usize) -> ModelConfig {
    ModelConfig::Gamma(GammaREConfig { a: vec![8.0, 16.0], b: 63.0, beta: vec![1.05, 2.511], n: vec![40, 40], d })
}

/// Normal populations with equal medians where the second has twice the
/// variance, so its lower quantiles are lower.
pub fn counterexample2(d: usize) -> ModelConfig {
    ModelConfig::Normal(NormalREConfig {
        mu: vec![15.5, 15.5],
        sigma2_gamma: vec![0.1, 0.2],
        sigma2_eps: vec![0.9, 1.8],
        n: vec![40, 40],
        d,
    })
}

/// Resolve a preset id: `table{1..6}-block{1..4}` or `counterexample{1,2}`.
/// Odd tables use the normal model and even tables the gamma model;
/// tables 1-2 are AMSE, 3-4 coverage and 5-6 rejection-rate studies.
pub fn preset(id: &str, d: usize) -> Result<(StudyKind, ModelConfig)> {
    match id {
        "counterexample1" => return Ok((StudyKind::Counterexample1, counterexample1(d))),
        "counterexample2" => return Ok((StudyKind::Counterexample2, counterexample2(d))),
        _ => {}
    }
    let bad = || {
        Error::InvalidArgument(format!("unknown preset {id:?} (expected table<1-6>-block<1-4> or counterexample<1-2>)"))
    };
    let rest = id.strip_prefix("table").ok_or_else(bad)?;
    let (table, block) = rest.split_once("-block").ok_or_else(bad)?;
    let table: usize = table.parse().map_err(|_| bad())?;
    let block: usize = block.parse().map_err(|_| bad())?;
    let kind = match table {
        1 | 2 => StudyKind::Amse,
        3 | 4 => StudyKind::Coverage,
        5 | 6 => StudyKind::Power,
        _ => return Err(bad()),
    };
    let model = if table % 2 == 1 { normal_block(block, d)? } else { gamma_block(block, d)? };
    Ok((kind, model))
}

/// The cluster sizes every table reports.
pub const TABLE_CLUSTER_SIZES: [usize; 2] = [5, 10];
