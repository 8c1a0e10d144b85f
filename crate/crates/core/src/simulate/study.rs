use rayon::prelude::*;
use serde::{Serialize, Serializer};

use super::{true_quantiles, ModelConfig};
use crate::baselines::{
    sorted_empirical_quantile, wald_difference_interval, wald_interval, wilcoxon_clustered, SplitLevel, WilcoxonVariant,
};
use crate::bootstrap::{bootstrap_quantiles, percentile};
use crate::data::ClusteredDataset;
use crate::drm::{cel_quantile, fit, fitted_cdf, FitOptions};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Domain};

/// Replicates allowed to fail before a study is aborted.
pub const MAX_FAILED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyKind {
    Amse,
    Coverage,
    Power,
    Counterexample1,
    Counterexample2,
}

impl StudyKind {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "amse" => Ok(Self::Amse),
            "coverage" => Ok(Self::Coverage),
            "power" => Ok(Self::Power),
            "counterexample1" => Ok(Self::Counterexample1),
            "counterexample2" => Ok(Self::Counterexample2),
            other => Err(Error::InvalidArgument(format!("unknown study {other:?}"))),
        }
    }

    pub fn default_methods(self) -> Vec<Method> {
        match self {
            Self::Amse => vec![Method::Cel, Method::Emp],
            Self::Coverage => vec![Method::Cel, Method::Wald],
            Self::Power | Self::Counterexample1 | Self::Counterexample2 => {
                vec![Method::Cel, Method::W1, Method::W2, Method::W3]
            }
        }
    }

    pub fn default_alphas(self) -> Vec<f64> {
        match self {
            Self::Power => vec![0.05],
            _ => vec![0.05, 0.10],
        }
    }

    pub fn uses_bootstrap(self) -> bool {
        self != Self::Amse
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Composite EL: point estimates, bootstrap intervals and the
    /// bootstrap monitoring test.
    Cel,
    /// Empirical quantiles.
    Emp,
    /// Empirical quantiles with independence-based Wald intervals.
    Wald,
    W1,
    W2,
    W3,
}

impl Method {
    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "cel" => Ok(Self::Cel),
            "emp" => Ok(Self::Emp),
            "wald" => Ok(Self::Wald),
            "w1" => Ok(Self::W1),
            "w2" => Ok(Self::W2),
            "w3" => Ok(Self::W3),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }

    fn wilcoxon_variant(self) -> Option<WilcoxonVariant> {
        match self {
            Self::W1 => Some(WilcoxonVariant::W1),
            Self::W2 => Some(WilcoxonVariant::W2),
            Self::W3 => Some(WilcoxonVariant::W3),
            _ => None,
        }
    }
}

/// A quantity estimated in every replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// `xi_{r, alpha}`
    Quantile(usize),
    /// `xi_{r, alpha} - xi_{s, alpha}`
    Difference(usize, usize),
}

impl Target {
    pub fn label(&self) -> String {
        match self {
            Self::Quantile(r) => format!("xi_{r}"),
            Self::Difference(r, s) => format!("dxi_{r}_{s}"),
        }
    }

    fn value(&self, q: &[f64]) -> f64 {
        match *self {
            Self::Quantile(r) => q[r],
            Self::Difference(r, s) => q[r] - q[s],
        }
    }
}

impl Serialize for Target {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub kind: StudyKind,
    pub model: ModelConfig,
    pub alphas: Vec<f64>,
    pub replications: usize,
    pub bootstrap_b: usize,
    /// Nominal error rate of intervals and tests.
    pub gamma: f64,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub split: SplitLevel,
}

impl StudyConfig {
    /// The default design for `kind`: its methods and levels, `gamma = 0.05`,
    /// and W3 splitting clusters.
    pub fn new(kind: StudyKind, model: ModelConfig, replications: usize, bootstrap_b: usize, seed: u64) -> Self {
        Self {
            kind,
            model,
            alphas: kind.default_alphas(),
            replications,
            bootstrap_b: if kind.uses_bootstrap() { bootstrap_b } else { 0 },
            gamma: 0.05,
            seed,
            methods: kind.default_methods(),
            split: SplitLevel::Cluster,
        }
    }

    fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.replications == 0 {
            return Err(Error::InvalidArgument("a study needs at least one replication".into()));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::InvalidArgument("quantile levels must lie in (0, 1)".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidArgument("gamma must lie in (0, 1)".into()));
        }
        if self.model.n_populations() < 2 {
            return Err(Error::InvalidArgument("a study needs at least two populations".into()));
        }
        Ok(())
    }

    fn has(&self, m: Method) -> bool {
        self.methods.contains(&m)
    }

    fn bootstraps(&self) -> bool {
        self.has(Method::Cel) && self.bootstrap_b > 0
    }
}

/// `AMSE x 100` with its Monte Carlo standard error on the same scale.
#[derive(Debug, Clone, Serialize)]
pub struct AmseCell {
    pub method: Method,
    pub target: Target,
    pub alpha: f64,
    pub value: f64,
    pub se: f64,
}

/// A percentage (coverage or rejection rate) with its binomial standard
/// error in percentage points.
#[derive(Debug, Clone, Serialize)]
pub struct RateCell {
    pub method: Method,
    pub target: Target,
    /// `None` for tests that do not depend on the quantile level.
    pub alpha: Option<f64>,
    pub percent: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    pub study: StudyKind,
    pub model: ModelConfig,
    pub basis: String,
    pub alphas: Vec<f64>,
    pub gamma: f64,
    pub replications: usize,
    pub replications_used: usize,
    pub n_failed: usize,
    pub bootstrap_b: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    /// `true_quantiles[a][k]` for `alphas[a]`.
    pub true_quantiles: Vec<Vec<f64>>,
    pub amse: Vec<AmseCell>,
    pub coverage: Vec<RateCell>,
    pub rejection: Vec<RateCell>,
}

impl StudyReport {
    pub fn amse_cell(&self, method: Method, target: Target, alpha: f64) -> Option<&AmseCell> {
        self.amse.iter().find(|c| c.method == method && c.target == target && c.alpha == alpha)
    }

    pub fn coverage_cell(&self, method: Method, target: Target, alpha: f64) -> Option<&RateCell> {
        self.coverage.iter().find(|c| c.method == method && c.target == target && c.alpha == Some(alpha))
    }

    /// Rejection rate of `H0: xi_0 <= xi_k`; `alpha` is ignored for the
    /// Wilcoxon tests.
    pub fn rejection_cell(&self, method: Method, k: usize, alpha: f64) -> Option<&RateCell> {
        let target = Target::Difference(0, k);
        self.rejection
            .iter()
            .find(|c| c.method == method && c.target == target && (c.alpha.is_none() || c.alpha == Some(alpha)))
    }
}

/// Per-replicate results; indices are `[alpha][target]` or `[alpha][k]`.
struct Outcome {
    cel_sq: Vec<Vec<f64>>,
    emp_sq: Vec<Vec<f64>>,
    cel_cover: Vec<Vec<bool>>,
    wald_cover: Vec<Vec<bool>>,
    cel_reject: Vec<Vec<bool>>,
    /// `[variant][k]`
    wilcoxon_reject: Vec<Vec<bool>>,
}

fn targets(m1: usize) -> Vec<Target> {
    (0..m1).map(Target::Quantile).chain((1..m1).map(|k| Target::Difference(0, k))).collect()
}

fn replicate(cfg: &StudyConfig, truth: &[Vec<f64>], index: usize) -> Result<Outcome> {
    let ds: ClusteredDataset = cfg.model.generate(derive_seed(cfg.seed, Domain::Study, index as u64))?;
    let m1 = ds.n_populations();
    let targets = targets(m1);
    let na = cfg.alphas.len();
    let basis = cfg.model.basis();
    let f = fit(&ds, &basis, &FitOptions::default())?;

    let mut cel = vec![vec![0.0; m1]; na];
    for r in 0..m1 {
        let cdf = fitted_cdf(&f, r)?;
        for (a, &alpha) in cfg.alphas.iter().enumerate() {
            cel[a][r] = cel_quantile(&cdf, alpha)?;
        }
    }
    let mut emp = vec![vec![0.0; m1]; na];
    for r in 0..m1 {
        let mut v = ds.population(r).flat_values();
        v.sort_by(f64::total_cmp);
        for (a, &alpha) in cfg.alphas.iter().enumerate() {
            emp[a][r] = sorted_empirical_quantile(&v, alpha);
        }
    }
    let sq = |est: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..na)
            .map(|a| {
                targets
                    .iter()
                    .map(|t| {
                        let e = t.value(&est[a]) - t.value(&truth[a]);
                        e * e
                    })
                    .collect()
            })
            .collect()
    };

    let mut cel_cover = Vec::new();
    let mut cel_reject = Vec::new();
    if cfg.bootstraps() {
        let reps = bootstrap_quantiles(
            &ds,
            &f,
            &cfg.alphas,
            cfg.bootstrap_b,
            derive_seed(cfg.seed, Domain::Bootstrap, index as u64),
        )?;
        for a in 0..na {
            let mut cover = Vec::with_capacity(targets.len());
            let mut reject = Vec::with_capacity(m1 - 1);
            for t in &targets {
                let mut values: Vec<f64> = reps
                    .replicates
                    .iter()
                    .map(|q| {
                        let per_pop: Vec<f64> = (0..m1).map(|r| q[r * na + a]).collect();
                        t.value(&per_pop)
                    })
                    .collect();
                values.sort_by(f64::total_cmp);
                let lo = percentile(&values, cfg.gamma / 2.0);
                let hi = percentile(&values, 1.0 - cfg.gamma / 2.0);
                let tv = t.value(&truth[a]);
                cover.push(lo <= tv && tv <= hi);
                if let Target::Difference(..) = t {
                    reject.push(percentile(&values, cfg.gamma) > 0.0);
                }
            }
            cel_cover.push(cover);
            cel_reject.push(reject);
        }
    }

    let mut wald_cover = Vec::new();
    if cfg.has(Method::Wald) {
        for (a, &alpha) in cfg.alphas.iter().enumerate() {
            let mut cover = Vec::with_capacity(targets.len());
            for t in &targets {
                let w = match *t {
                    Target::Quantile(r) => wald_interval(ds.population(r), alpha, cfg.gamma)?,
                    Target::Difference(r, s) => {
                        wald_difference_interval(ds.population(r), ds.population(s), alpha, cfg.gamma)?
                    }
                };
                let tv = t.value(&truth[a]);
                cover.push(w.ci[0] <= tv && tv <= w.ci[1]);
            }
            wald_cover.push(cover);
        }
    }

    let split_seed = derive_seed(cfg.seed, Domain::Split, index as u64);
    let mut wilcoxon_reject = Vec::new();
    for method in [Method::W1, Method::W2, Method::W3] {
        let variant = method.wilcoxon_variant().expect("Wilcoxon method");
        let row = if cfg.has(method) {
            (1..m1)
                .map(|k| {
                    wilcoxon_clustered(ds.population(k), ds.population(0), variant, cfg.gamma, split_seed, cfg.split)
                        .map(|w| w.reject)
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        wilcoxon_reject.push(row);
    }

    Ok(Outcome { cel_sq: sq(&cel), emp_sq: sq(&emp), cel_cover, wald_cover, cel_reject, wilcoxon_reject })
}

fn mean_se(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, f64::NAN);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn rate(hits: impl Iterator<Item = bool>) -> (f64, f64) {
    let (mut k, mut n) = (0usize, 0usize);
    for h in hits {
        k += h as usize;
        n += 1;
    }
    let p = k as f64 / n as f64;
    (100.0 * p, 100.0 * (p * (1.0 - p) / n as f64).sqrt())
}

/// Run `replications` independent datasets through every requested method.
/// Replicate `i` is a pure function of `(seed, i)`, so the report does not
/// depend on how replicates are scheduled across threads.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let m1 = cfg.model.n_populations();
    let truth: Vec<Vec<f64>> = cfg.alphas.iter().map(|&a| true_quantiles(&cfg.model, a)).collect::<Result<_>>()?;
    let outcomes: Vec<Result<Outcome>> =
        (0..cfg.replications).into_par_iter().map(|i| replicate(cfg, &truth, i)).collect();
    let n_failed = outcomes.iter().filter(|o| o.is_err()).count();
    if n_failed as f64 > MAX_FAILED_FRACTION * cfg.replications as f64 {
        return Err(Error::StudyUnreliable { failed: n_failed, total: cfg.replications });
    }
    let ok: Vec<Outcome> = outcomes.into_iter().filter_map(|o| o.ok()).collect();
    if ok.is_empty() {
        return Err(Error::StudyUnreliable { failed: n_failed, total: cfg.replications });
    }
    let targets = targets(m1);

    let mut amse = Vec::new();
    for (method, pick) in [(Method::Cel, 0), (Method::Emp, 1)] {
        if !cfg.has(method) {
            continue;
        }
        for (ti, &target) in targets.iter().enumerate() {
            for (a, &alpha) in cfg.alphas.iter().enumerate() {
                let col = ok.iter().map(|o| if pick == 0 { o.cel_sq[a][ti] } else { o.emp_sq[a][ti] });
                let (value, se) = mean_se(col);
                amse.push(AmseCell { method, target, alpha, value: 100.0 * value, se: 100.0 * se });
            }
        }
    }

    let mut coverage = Vec::new();
    for (method, on) in [(Method::Cel, cfg.bootstraps()), (Method::Wald, cfg.has(Method::Wald))] {
        if !on {
            continue;
        }
        for (ti, &target) in targets.iter().enumerate() {
            for (a, &alpha) in cfg.alphas.iter().enumerate() {
                let (percent, se) =
                    rate(ok.iter().map(
                        |o| {
                            if method == Method::Cel {
                                o.cel_cover[a][ti]
                            } else {
                                o.wald_cover[a][ti]
                            }
                        },
                    ));
                coverage.push(RateCell { method, target, alpha: Some(alpha), percent, se });
            }
        }
    }

    let mut rejection = Vec::new();
    if cfg.bootstraps() {
        for k in 1..m1 {
            for (a, &alpha) in cfg.alphas.iter().enumerate() {
                let (percent, se) = rate(ok.iter().map(|o| o.cel_reject[a][k - 1]));
                rejection.push(RateCell {
                    method: Method::Cel,
                    target: Target::Difference(0, k),
                    alpha: Some(alpha),
                    percent,
                    se,
                });
            }
        }
    }
    for (v, method) in [Method::W1, Method::W2, Method::W3].into_iter().enumerate() {
        if !cfg.has(method) {
            continue;
        }
        for k in 1..m1 {
            let (percent, se) = rate(ok.iter().map(|o| o.wilcoxon_reject[v][k - 1]));
            rejection.push(RateCell { method, target: Target::Difference(0, k), alpha: None, percent, se });
        }
    }

    Ok(StudyReport {
        study: cfg.kind,
        model: cfg.model.clone(),
        basis: cfg.model.basis().describe(),
        alphas: cfg.alphas.clone(),
        gamma: cfg.gamma,
        replications: cfg.replications,
        replications_used: ok.len(),
        n_failed,
        bootstrap_b: cfg.bootstrap_b,
        seed: cfg.seed,
        methods: cfg.methods.clone(),
        true_quantiles: truth,
        amse,
        coverage,
        rejection,
    })
}
