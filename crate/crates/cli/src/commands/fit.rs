use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use drm_core::asymptotics::{estimate_components, quantile_covariance};
use drm_core::bootstrap::bootstrap_quantiles;
use drm_core::data::{validate, Diagnostic, Severity};
use drm_core::{cel_quantile, fit, fitted_cdf, BasisFunction, ClusteredDataset, DrmFit, FitOptions};
use serde::Serialize;

use super::{check_levels, load_input, parse_bases};
use crate::manifest::RunManifest;
use crate::output::Emitter;
use crate::table::{num, Table};
use crate::{CliError, Progress};

#[derive(Args, Debug)]
pub struct FitArgs {
    /// CSV with columns population,cluster,value.
    #[arg(long)]
    input: PathBuf,
    /// One or more bases (y, y2, ylogy, logy, logy2), comma separated.
    #[arg(long, value_delimiter = ',', default_value = "y2")]
    basis: Vec<String>,
    /// Quantile levels, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.05")]
    alpha: Vec<f64>,
    /// Population to use as the model baseline.
    #[arg(long)]
    baseline: Option<String>,
    /// Add plug-in and bootstrap variances of the quantiles.
    #[arg(long)]
    diagnostics: bool,
    /// Bootstrap replicates for `--diagnostics`.
    #[arg(long = "B", default_value_t = 999)]
    b: usize,
    /// Seed for the `--diagnostics` bootstrap.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write every fitted distribution function to this CSV.
    #[arg(long)]
    dump_cdf: Option<PathBuf>,
}

#[derive(Serialize)]
pub struct PopulationSummary {
    pub label: String,
    pub n_clusters: usize,
    pub n_obs: usize,
}

#[derive(Serialize)]
pub struct DataSummary {
    pub populations: Vec<PopulationSummary>,
    pub n_clusters: usize,
    pub n_obs: usize,
    pub common_cluster_size: Option<usize>,
}

impl DataSummary {
    pub fn of(ds: &ClusteredDataset) -> Self {
        Self {
            populations: ds
                .populations()
                .iter()
                .map(|p| PopulationSummary { label: p.label().into(), n_clusters: p.n_clusters(), n_obs: p.n_obs() })
                .collect(),
            n_clusters: ds.n_clusters(),
            n_obs: ds.n_obs(),
            common_cluster_size: ds.common_cluster_size(),
        }
    }
}

#[derive(Serialize)]
struct ThetaBlock {
    population: String,
    theta: Vec<f64>,
}

#[derive(Serialize)]
struct Convergence {
    converged: bool,
    iterations: usize,
    gradient_norm: f64,
}

#[derive(Serialize)]
struct QuantileRow {
    population: String,
    alpha: f64,
    value: f64,
}

#[derive(Serialize)]
struct VarianceRow {
    population: String,
    quantile: f64,
    density: f64,
    sigma_rr: f64,
    /// `sigma_rr / n`.
    plugin_variance: f64,
    bootstrap_variance: f64,
    /// Bootstrap over plug-in variance.
    ratio: f64,
}

#[derive(Serialize)]
struct VarianceLevel {
    alpha: f64,
    populations: Vec<VarianceRow>,
}

#[derive(Serialize)]
struct Covariance {
    bootstrap_b: usize,
    seed: u64,
    n_failed: usize,
    warnings: Vec<String>,
    levels: Vec<VarianceLevel>,
}

#[derive(Serialize)]
struct BasisBlock {
    basis: String,
    description: String,
    warnings: Vec<Diagnostic>,
    /// Blocks `theta_1, ..., theta_m`; the baseline has none.
    theta: Vec<ThetaBlock>,
    loglik: f64,
    convergence: Convergence,
    quantiles: Vec<QuantileRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    covariance: Option<Covariance>,
}

#[derive(Serialize)]
struct FitReport {
    command: &'static str,
    data: DataSummary,
    alphas: Vec<f64>,
    fits: Vec<BasisBlock>,
}

fn covariance(ds: &ClusteredDataset, f: &DrmFit, alphas: &[f64], b: usize, seed: u64) -> Result<Covariance, CliError> {
    let comp = estimate_components(ds, f)?;
    let reps = bootstrap_quantiles(ds, f, alphas, b, seed)?;
    let labels: Vec<&str> = ds.populations().iter().map(|p| p.label()).collect();
    let mut levels = Vec::with_capacity(alphas.len());
    for (a, &alpha) in alphas.iter().enumerate() {
        let cov = quantile_covariance(&comp, f, &[alpha])?;
        let populations = (0..ds.n_populations())
            .map(|r| {
                let col = reps.column(r, a);
                let n = col.len() as f64;
                let mean = col.iter().sum::<f64>() / n;
                let boot = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
                let plug = cov.variance(r);
                VarianceRow {
                    population: labels[r].into(),
                    quantile: cov.quantiles[r],
                    density: cov.density_at_quantile[r],
                    sigma_rr: cov.sigma[(r, r)],
                    plugin_variance: plug,
                    bootstrap_variance: boot,
                    ratio: boot / plug,
                }
            })
            .collect();
        levels.push(VarianceLevel { alpha, populations });
    }
    Ok(Covariance { bootstrap_b: b, seed, n_failed: reps.n_failed, warnings: comp.warnings.clone(), levels })
}

fn fit_basis(ds: &ClusteredDataset, basis: &BasisFunction, args: &FitArgs) -> Result<(BasisBlock, DrmFit), CliError> {
    let findings = validate(ds, basis);
    if let Some(d) = findings.iter().find(|d| d.severity() == Severity::Error) {
        return Err(CliError::Run(format!("basis {}: {d}", basis.name())));
    }
    let f = fit(ds, basis, &FitOptions::default())?;
    let labels: Vec<&str> = ds.populations().iter().map(|p| p.label()).collect();
    let mut quantiles = Vec::new();
    for (r, label) in labels.iter().enumerate() {
        let cdf = fitted_cdf(&f, r)?;
        for &alpha in &args.alpha {
            quantiles.push(QuantileRow { population: (*label).into(), alpha, value: cel_quantile(&cdf, alpha)? });
        }
    }
    let covariance = if args.diagnostics { Some(covariance(ds, &f, &args.alpha, args.b, args.seed)?) } else { None };
    let block = BasisBlock {
        basis: basis.name().into(),
        description: basis.describe(),
        warnings: findings,
        theta: (1..=f.m())
            .map(|r| ThetaBlock { population: labels[r].into(), theta: f.theta_hat.block(r).to_vec() })
            .collect(),
        loglik: f.loglik,
        convergence: Convergence { converged: f.converged, iterations: f.iterations, gradient_norm: f.gradient_norm },
        quantiles,
        covariance,
    };
    Ok((block, f))
}

fn dump_cdfs(path: &PathBuf, ds: &ClusteredDataset, fits: &[(String, DrmFit)]) -> Result<(), CliError> {
    let mut s = String::from("basis,population,value,mass,cdf\n");
    for (name, f) in fits {
        for (r, p) in ds.populations().iter().enumerate() {
            let cdf = fitted_cdf(f, r)?;
            for ((v, m), c) in cdf.support.iter().zip(&cdf.mass).zip(&cdf.cumulative) {
                let _ = writeln!(s, "{name},{},{v},{m},{c}", p.label());
            }
        }
    }
    std::fs::write(path, s).map_err(|e| CliError::Run(format!("cannot write {}: {e}", path.display())))
}

fn render(report: &FitReport) -> String {
    let mut out = String::new();
    let mut header = vec!["Population".to_string(), "alpha".to_string()];
    header.extend(report.fits.iter().map(|b| format!("q = {}", b.description)));
    let mut t = Table::new(header).title("Composite EL quantiles");
    let rows = report.fits.first().map_or(0, |b| b.quantiles.len());
    for i in 0..rows {
        let q = &report.fits[0].quantiles[i];
        let mut row = vec![q.population.clone(), num(q.alpha, 3)];
        row.extend(report.fits.iter().map(|b| num(b.quantiles[i].value, 4)));
        t.row(row);
    }
    out.push_str(&t.render());
    for b in &report.fits {
        let Some(cov) = &b.covariance else { continue };
        for level in &cov.levels {
            let mut t =
                Table::new(["Population", "quantile", "density", "sigma_rr", "plug-in var", "bootstrap var", "ratio"])
                    .title(format!("\nVariance diagnostics, basis {}, alpha = {}", b.basis, level.alpha));
            for r in &level.populations {
                t.row([
                    r.population.clone(),
                    num(r.quantile, 4),
                    num(r.density, 4),
                    num(r.sigma_rr, 4),
                    num(r.plugin_variance, 5),
                    num(r.bootstrap_variance, 5),
                    num(r.ratio, 3),
                ]);
            }
            out.push_str(&t.render());
        }
    }
    out
}

pub fn run(
    args: FitArgs,
    manifest: &mut RunManifest,
    progress: Progress,
    emitter: &Emitter,
    started: Instant,
    threads: usize,
) -> Result<(), CliError> {
    check_levels("--alpha", &args.alpha)?;
    if args.diagnostics && args.b < 2 {
        return Err(CliError::Usage("--B must be at least 2 for variance diagnostics".into()));
    }
    let bases = parse_bases(&args.basis)?;
    let ds = load_input(&args.input, args.baseline.as_deref(), manifest)?;
    if args.diagnostics {
        manifest.seed = Some(args.seed);
    }
    let mut blocks = Vec::with_capacity(bases.len());
    let mut fits = Vec::with_capacity(bases.len());
    for basis in &bases {
        progress.note(format!("fitting basis {}", basis.name()));
        let (block, f) = fit_basis(&ds, basis, &args)?;
        blocks.push(block);
        fits.push((basis.name().to_string(), f));
    }
    if let Some(path) = &args.dump_cdf {
        dump_cdfs(path, &ds, &fits)?;
    }
    let report = FitReport { command: "fit", data: DataSummary::of(&ds), alphas: args.alpha.clone(), fits: blocks };
    emitter.emit(manifest, &report, started, threads, || render(&report))
}
