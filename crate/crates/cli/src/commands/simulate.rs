use std::time::Instant;

use clap::{Args, ValueEnum};
use drm_core::baselines::SplitLevel;
use drm_core::simulate::{
    gamma_block, normal_block, preset, run_study, Method, ModelConfig, RateCell, StudyConfig, StudyKind, StudyReport,
    Target, TABLE_CLUSTER_SIZES,
};
use serde::Serialize;

use super::check_levels;
use super::test::SplitArg;
use crate::manifest::RunManifest;
use crate::output::Emitter;
use crate::table::{num, Table};
use crate::{CliError, Progress};

const DESK_REPLICATIONS: usize = 2000;
const FULL_REPLICATIONS: usize = 10_000;

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyArg {
    Amse,
    Coverage,
    Power,
    Counterexample1,
    Counterexample2,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelArg {
    Normal,
    Gamma,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Kind of study; counterexample studies need no `--model`.
    #[arg(long, value_enum)]
    study: Option<StudyArg>,
    /// Population family, for `--study` without a preset.
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Parameter block: table<1-6>-block<1-4>, counterexample1 or
    /// counterexample2.
    #[arg(long)]
    preset: Option<String>,
    /// Monte Carlo replications (default 2000).
    #[arg(long = "R")]
    r: Option<usize>,
    /// Use 10000 replications.
    #[arg(long, conflicts_with = "r")]
    full: bool,
    /// Bootstrap replicates per dataset.
    #[arg(long = "B", default_value_t = 999)]
    b: usize,
    /// Master seed; every replicate derives its streams from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cluster sizes to run, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = TABLE_CLUSTER_SIZES)]
    d: Vec<usize>,
    /// Quantile levels (defaults depend on the study).
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    /// Methods among cel, emp, wald, w1, w2, w3 (defaults depend on the study).
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Interval and test level.
    #[arg(long, default_value_t = 0.05)]
    gamma: f64,
    /// How W3 halves each sample.
    #[arg(long, value_enum, default_value_t = SplitArg::Cluster)]
    split: SplitArg,
}

#[derive(Serialize)]
struct SimulateReport {
    command: &'static str,
    preset: Option<String>,
    runs: Vec<StudyReport>,
}

fn kind_of(a: StudyArg) -> StudyKind {
    match a {
        StudyArg::Amse => StudyKind::Amse,
        StudyArg::Coverage => StudyKind::Coverage,
        StudyArg::Power => StudyKind::Power,
        StudyArg::Counterexample1 => StudyKind::Counterexample1,
        StudyArg::Counterexample2 => StudyKind::Counterexample2,
    }
}

fn family(m: &ModelConfig) -> ModelArg {
    match m {
        ModelConfig::Normal(_) => ModelArg::Normal,
        ModelConfig::Gamma(_) => ModelArg::Gamma,
    }
}

fn resolve(args: &SimulateArgs, d: usize) -> Result<(StudyKind, ModelConfig), CliError> {
    let (kind, model) = match (&args.preset, args.study) {
        (Some(id), _) => preset(id, d).map_err(|e| CliError::Usage(e.to_string()))?,
        (None, Some(StudyArg::Counterexample1)) => preset("counterexample1", d)?,
        (None, Some(StudyArg::Counterexample2)) => preset("counterexample2", d)?,
        (None, Some(s)) => {
            let model = match args.model {
                Some(ModelArg::Normal) => normal_block(1, d)?,
                Some(ModelArg::Gamma) => gamma_block(1, d)?,
                None => return Err(CliError::Usage("give --preset, or --study with --model".into())),
            };
            (kind_of(s), model)
        }
        (None, None) => return Err(CliError::Usage("give --preset or --study".into())),
    };
    if let Some(m) = args.model {
        if m != family(&model) {
            return Err(CliError::Usage(format!("--model {m:?} does not match the {} preset", model.name())));
        }
    }
    Ok((args.study.map_or(kind, kind_of), model))
}

fn config(args: &SimulateArgs, d: usize) -> Result<StudyConfig, CliError> {
    if d == 0 {
        return Err(CliError::Usage("--d values must be positive".into()));
    }
    let (kind, model) = resolve(args, d)?;
    let r = if args.full { FULL_REPLICATIONS } else { args.r.unwrap_or(DESK_REPLICATIONS) };
    let mut cfg = StudyConfig::new(kind, model, r, args.b, args.seed);
    if let Some(alphas) = &args.alpha {
        check_levels("--alpha", alphas)?;
        cfg.alphas = alphas.clone();
    }
    if let Some(methods) = &args.methods {
        cfg.methods = methods.iter().map(|m| Method::from_name(m.trim())).collect::<Result<_, _>>()?;
    }
    check_levels("--gamma", &[args.gamma])?;
    cfg.gamma = args.gamma;
    cfg.split = match args.split {
        SplitArg::Cluster => SplitLevel::Cluster,
        SplitArg::Observation => SplitLevel::Observation,
    };
    if cfg.methods.contains(&Method::Cel) && kind.uses_bootstrap() && cfg.bootstrap_b == 0 {
        return Err(CliError::Usage("--B must be positive for bootstrap studies".into()));
    }
    Ok(cfg)
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Cel => "CEL",
        Method::Emp => "EMP",
        Method::Wald => "Wald",
        Method::W1 => "W1",
        Method::W2 => "W2",
        Method::W3 => "W3",
    }
}

fn target_name(t: Target) -> String {
    match t {
        Target::Quantile(r) => format!("xi_{r}"),
        Target::Difference(r, s) => format!("xi_{r} - xi_{s}"),
    }
}

fn cell(v: f64, se: f64) -> String {
    format!("{} ({})", num(v, 2), num(se, 2))
}

/// Rows are targets; columns are (d, method, alpha), as in the printed
/// tables. Every value is followed by its Monte Carlo standard error.
fn render(report: &SimulateReport) -> String {
    let mut out = String::new();
    let Some(first) = report.runs.first() else { return out };
    let targets: Vec<Target> = {
        let mut t: Vec<Target> = Vec::new();
        for c in &first.amse {
            if !t.contains(&c.target) {
                t.push(c.target);
            }
        }
        for c in first.coverage.iter().chain(&first.rejection) {
            if !t.contains(&c.target) {
                t.push(c.target);
            }
        }
        t
    };
    let header = |cols: &[(usize, Method, Option<f64>)]| -> Vec<String> {
        std::iter::once(String::new())
            .chain(cols.iter().map(|(d, m, a)| match a {
                Some(a) => format!("d={d} {} {a}", method_name(*m)),
                None => format!("d={d} {}", method_name(*m)),
            }))
            .collect()
    };
    let d_of = |r: &StudyReport| match &r.model {
        ModelConfig::Normal(c) => c.d,
        ModelConfig::Gamma(c) => c.d,
    };

    if !first.amse.is_empty() {
        let mut cols = Vec::new();
        for r in &report.runs {
            for c in &r.amse {
                let key = (d_of(r), c.method, Some(c.alpha));
                if !cols.contains(&key) {
                    cols.push(key);
                }
            }
        }
        let mut t = Table::new(header(&cols)).title("AMSE (x100)");
        for &target in targets.iter().filter(|t| first.amse.iter().any(|c| c.target == **t)) {
            let mut row = vec![target_name(target)];
            for &(d, m, a) in &cols {
                let run = report.runs.iter().find(|r| d_of(r) == d);
                let c = run.and_then(|r| r.amse_cell(m, target, a.unwrap_or(0.0)));
                row.push(c.map_or(String::new(), |c| cell(c.value, c.se)));
            }
            t.row(row);
        }
        out.push_str(&t.render());
    }

    let rate_table = |title: &str, pick: fn(&StudyReport) -> &Vec<RateCell>| -> Option<String> {
        if report.runs.iter().all(|r| pick(r).is_empty()) {
            return None;
        }
        let mut cols = Vec::new();
        for r in &report.runs {
            for c in pick(r) {
                let key = (d_of(r), c.method, c.alpha);
                if !cols.contains(&key) {
                    cols.push(key);
                }
            }
        }
        let mut t = Table::new(header(&cols)).title(title);
        for &target in targets.iter().filter(|t| pick(first).iter().any(|c| c.target == **t)) {
            let label = match (title, target) {
                ("Rejection rate (%)", Target::Difference(_, k)) => format!("H_{k},0"),
                _ => target_name(target),
            };
            let mut row = vec![label];
            for &(d, m, a) in &cols {
                let run = report.runs.iter().find(|r| d_of(r) == d);
                let c = run.and_then(|r| pick(r).iter().find(|c| c.method == m && c.target == target && c.alpha == a));
                row.push(c.map_or(String::new(), |c| cell(c.percent, c.se)));
            }
            t.row(row);
        }
        Some(t.render())
    };
    for (title, pick) in [
        ("Coverage (%)", (|r: &StudyReport| &r.coverage) as fn(&StudyReport) -> &Vec<RateCell>),
        ("Rejection rate (%)", |r: &StudyReport| &r.rejection),
    ] {
        if let Some(s) = rate_table(title, pick) {
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&s);
        }
    }
    out
}

pub fn run(
    args: SimulateArgs,
    manifest: &mut RunManifest,
    progress: Progress,
    emitter: &Emitter,
    started: Instant,
    threads: usize,
) -> Result<(), CliError> {
    if args.d.is_empty() {
        return Err(CliError::Usage("--d needs at least one cluster size".into()));
    }
    manifest.seed = Some(args.seed);
    let configs = args.d.iter().map(|&d| config(&args, d)).collect::<Result<Vec<_>, _>>()?;
    let mut runs = Vec::with_capacity(configs.len());
    for cfg in &configs {
        progress.note(format!(
            "{} study, {} model, d = {}: {} replications, B = {}",
            format!("{:?}", cfg.kind).to_lowercase(),
            cfg.model.name(),
            cfg.model.cluster_size(),
            cfg.replications,
            cfg.bootstrap_b
        ));
        runs.push(run_study(cfg)?);
    }
    let report = SimulateReport { command: "simulate", preset: args.preset.clone(), runs };
    emitter.emit(manifest, &report, started, threads, || render(&report))
}
