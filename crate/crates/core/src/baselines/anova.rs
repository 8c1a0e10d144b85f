use serde::Serialize;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::data::PopulationSample;
use crate::error::{Error, Result};

/// One-way ANOVA with lot as the factor, plus moment estimates of the
/// variance components.
#[derive(Debug, Clone, Serialize)]
pub struct AnovaTable {
    pub df_lot: usize,
    pub df_resid: usize,
    pub ss_lot: f64,
    pub ss_resid: f64,
    pub ms_lot: f64,
    pub ms_resid: f64,
    pub f_value: f64,
    pub p_value: f64,
    pub sigma2_gamma_hat: f64,
    pub sigma2_eps_hat: f64,
}

/// Test `H0: sigma^2_gamma = 0` for one population. With unequal cluster
/// sizes `d_j` the lot mean square estimates
/// `sigma^2_eps + d0 sigma^2_gamma`, `d0 = (N - sum d_j^2 / N) / (a - 1)`.
pub fn anova_random_effects(pop: &PopulationSample) -> Result<AnovaTable> {
    let a = pop.n_clusters();
    let n = pop.n_obs();
    if a < 2 {
        return Err(Error::InvalidData(format!("population {} needs at least two clusters", pop.label())));
    }
    if n <= a {
        return Err(Error::InvalidData(format!(
            "population {} has no cluster with two or more observations",
            pop.label()
        )));
    }
    let grand = pop.flat_values().iter().sum::<f64>() / n as f64;
    let mut ss_lot = 0.0;
    let mut ss_resid = 0.0;
    let mut sum_d2 = 0.0;
    for c in pop.clusters() {
        let obs = c.observations();
        let d = obs.len() as f64;
        let mean = obs.iter().sum::<f64>() / d;
        ss_lot += d * (mean - grand) * (mean - grand);
        ss_resid += obs.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>();
        sum_d2 += d * d;
    }
    let df_lot = a - 1;
    let df_resid = n - a;
    let ms_lot = ss_lot / df_lot as f64;
    let ms_resid = ss_resid / df_resid as f64;
    if !(ms_resid > 0.0) {
        return Err(Error::InvalidData(format!("population {} has no within-cluster variation", pop.label())));
    }
    let f_value = ms_lot / ms_resid;
    let dist = FisherSnedecor::new(df_lot as f64, df_resid as f64).map_err(|e| Error::Numerical(e.to_string()))?;
    let p_value = dist.sf(f_value);
    let nf = n as f64;
    let d0 = (nf - sum_d2 / nf) / df_lot as f64;
    Ok(AnovaTable {
        df_lot,
        df_resid,
        ss_lot,
        ss_resid,
        ms_lot,
        ms_resid,
        f_value,
        p_value,
        sigma2_gamma_hat: ((ms_lot - ms_resid) / d0).max(0.0),
        sigma2_eps_hat: ms_resid,
    })
}
