use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use drm_core::baselines::anova_random_effects;
use serde::Serialize;

use super::{load_input, population_index};
use crate::manifest::RunManifest;
use crate::output::Emitter;
use crate::table::{num, Table};
use crate::CliError;

#[derive(Args, Debug)]
pub struct AnovaArgs {
    /// CSV with columns population,cluster,value.
    #[arg(long)]
    input: PathBuf,
    /// Population to analyse; every population when omitted.
    #[arg(long)]
    population: Option<String>,
}

#[derive(Serialize)]
struct AnovaRow {
    source: &'static str,
    df: usize,
    sum_sq: f64,
    mean_sq: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    f_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_value: Option<f64>,
}

#[derive(Serialize)]
struct PopulationAnova {
    population: String,
    rows: [AnovaRow; 2],
    sigma2_gamma_hat: f64,
    sigma2_eps_hat: f64,
}

#[derive(Serialize)]
struct AnovaReport {
    command: &'static str,
    tables: Vec<PopulationAnova>,
}

fn render(r: &AnovaReport) -> String {
    let mut out = String::new();
    for (i, p) in r.tables.iter().enumerate() {
        let sep = if i == 0 { "" } else { "\n" };
        let mut t =
            Table::new(["", "Df", "Sum Sq", "Mean Sq", "F-value", "P-value"]).title(format!("{sep}{}", p.population));
        for row in &p.rows {
            t.row([
                row.source.to_string(),
                row.df.to_string(),
                num(row.sum_sq, 2),
                num(row.mean_sq, 2),
                row.f_value.map_or(String::new(), |f| num(f, 2)),
                row.p_value.map_or(String::new(), |p| format!("{p:.3e}")),
            ]);
        }
        out.push_str(&t.render());
        out.push_str(&format!(
            "sigma2_gamma = {}, sigma2_eps = {}\n",
            num(p.sigma2_gamma_hat, 4),
            num(p.sigma2_eps_hat, 4)
        ));
    }
    out
}

pub fn run(
    args: AnovaArgs,
    manifest: &mut RunManifest,
    emitter: &Emitter,
    started: Instant,
    threads: usize,
) -> Result<(), CliError> {
    let ds = load_input(&args.input, None, manifest)?;
    let indices: Vec<usize> = match &args.population {
        Some(label) => vec![population_index(&ds, label)?],
        None => (0..ds.n_populations()).collect(),
    };
    let mut tables = Vec::with_capacity(indices.len());
    for k in indices {
        let pop = ds.population(k);
        let a = anova_random_effects(pop)?;
        tables.push(PopulationAnova {
            population: pop.label().into(),
            rows: [
                AnovaRow {
                    source: "Lot",
                    df: a.df_lot,
                    sum_sq: a.ss_lot,
                    mean_sq: a.ms_lot,
                    f_value: Some(a.f_value),
                    p_value: Some(a.p_value),
                },
                AnovaRow {
                    source: "Residuals",
                    df: a.df_resid,
                    sum_sq: a.ss_resid,
                    mean_sq: a.ms_resid,
                    f_value: None,
                    p_value: None,
                },
            ],
            sigma2_gamma_hat: a.sigma2_gamma_hat,
            sigma2_eps_hat: a.sigma2_eps_hat,
        });
    }
    let report = AnovaReport { command: "anova", tables };
    emitter.emit(manifest, &report, started, threads, || render(&report))
}
