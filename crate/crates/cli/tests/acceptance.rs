//! End-to-end acceptance checks. Each test writes one PASS/FAIL line to
//! stderr (bypassing the harness's capture) and then asserts.
//!
//! Monte Carlo checks use fixed seeds and the full desk-scale replication
//! counts, so this target dominates the workspace test time.

use std::io::Write;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use drm_core::asymptotics::{estimate_components, quantile_covariance};
use drm_core::bootstrap::bootstrap_quantiles;
use drm_core::drm::{gradient, hessian};
use drm_core::rng::{stream, Domain};
use drm_core::simulate::{
    counterexample1, counterexample2, gen_gamma_re, gen_normal_re, normal_block, normal_model, run_study,
    GammaREConfig, Method, NormalREConfig, StudyConfig, StudyKind, StudyReport, Target,
};
use drm_core::{cel_quantile, fit, fitted_cdf, BasisFunction, ClusteredDataset, FitOptions, PopulationSample};
use nalgebra::SymmetricEigen;
use rand::Rng;
use rayon::prelude::*;

const SEED: u64 = 20_240_601;
const R: usize = 2000;
const B: usize = 999;

fn report(id: u32, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "acceptance criterion {id:>2}: {verdict} | {detail}");
    assert!(pass, "criterion {id}: {detail}");
}

// ---------------------------------------------------------------------------
// Oracles shared by criteria 1 and 2.

/// `l(theta)` coded directly from its definition, with `rho_k` the share of
/// observations in population k and `theta` holding blocks `1..=m`.
fn loglik(ds: &ClusteredDataset, q: &dyn Fn(f64) -> Vec<f64>, theta: &[f64]) -> f64 {
    let n = ds.n_obs() as f64;
    let rho: Vec<f64> = ds.populations().iter().map(|p| p.n_obs() as f64 / n).collect();
    ds.iter_obs()
        .map(|(k, _, y)| {
            let x = q(y);
            let p = x.len();
            let eta = |r: usize| -> f64 {
                if r == 0 {
                    0.0
                } else {
                    theta[(r - 1) * p..r * p].iter().zip(&x).map(|(t, x)| t * x).sum()
                }
            };
            eta(k) - (0..rho.len()).map(|r| rho[r] * eta(r).exp()).sum::<f64>().ln()
        })
        .sum()
}

/// A small dataset whose populations all contain the same three values, so
/// no quadratic separates them and the maximizer exists.
fn small_dataset(index: u64) -> ClusteredDataset {
    let mut rng = stream(SEED, Domain::Test, index);
    let n_pops = rng.random_range(2..=3);
    let pops = (0..n_pops)
        .map(|k| {
            let mut clusters = vec![vec![0.6, 1.5, 2.4]];
            for _ in 0..rng.random_range(1..=3) {
                let size = rng.random_range(1..=3);
                clusters.push((0..size).map(|_| rng.random_range(0.2..3.0)).collect());
            }
            PopulationSample::from_vecs(format!("p{k}"), clusters).unwrap()
        })
        .collect();
    ClusteredDataset::new(pops).unwrap()
}

#[test]
fn criterion_01_optimizer_correctness() {
    let start = Instant::now();
    let basis = BasisFunction::linear_quadratic();
    let q = |y: f64| vec![1.0, y, y * y];
    let (mut worst_grad, mut worst_eig, mut worst_constraint) = (0.0f64, f64::NEG_INFINITY, 0.0f64);
    for i in 0..100 {
        let ds = small_dataset(i);
        let m = ds.m();
        let mut rng = stream(SEED, Domain::Test, 1000 + i);
        let theta: Vec<f64> = (0..3 * m).map(|_| rng.random_range(-0.8..0.8)).collect();
        let params = drm_core::DrmParameters::from_flat(m, 3, theta.clone()).unwrap();
        let g = gradient(&ds, &basis, &params).unwrap();
        let h = 1e-5;
        let fd: Vec<f64> = (0..theta.len())
            .map(|j| {
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[j] += h;
                dn[j] -= h;
                (loglik(&ds, &q, &up) - loglik(&ds, &q, &dn)) / (2.0 * h)
            })
            .collect();
        let diff = fd.iter().zip(&g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst_grad = worst_grad.max(diff / norm.max(1.0));

        let f = fit(&ds, &basis, &FitOptions::default()).unwrap();
        let hess = hessian(&ds, &basis, &f.theta_hat).unwrap();
        let scale = hess.abs().max().max(1.0);
        let top = SymmetricEigen::new(hess).eigenvalues.max();
        worst_eig = worst_eig.max(top / scale);
        for r in 0..=m {
            worst_constraint = worst_constraint.max((f.constraint_sum_direct(r) - 1.0).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_grad < 1e-5 && worst_eig <= 1e-9 && worst_constraint < 1e-8 && secs < 60.0;
    report(
        1,
        pass,
        format!(
            "100 datasets: max gradient rel. err {worst_grad:.2e} (< 1e-5), max Hessian eigenvalue / scale {worst_eig:.2e} (<= 0), \
             max |constraint - 1| {worst_constraint:.2e} (< 1e-8), {secs:.1}s"
        ),
    );
}

/// Coarse-to-fine grid search for the maximizer of a function on R^2.
fn grid_argmax(f: impl Fn(f64, f64) -> f64) -> (f64, f64) {
    let (mut ca, mut cb, mut w) = (0.0, 0.0, 32.0);
    while w > 1e-7 {
        let step = w / 20.0;
        let mut best = (f64::NEG_INFINITY, ca, cb);
        for i in -20..=20 {
            for j in -20..=20 {
                let (a, b) = (ca + i as f64 * step, cb + j as f64 * step);
                let v = f(a, b);
                if v > best.0 {
                    best = (v, a, b);
                }
            }
        }
        (ca, cb) = (best.1, best.2);
        w /= 5.0;
    }
    (ca, cb)
}

#[test]
fn criterion_02_grid_oracle() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut cases = 0;
    for i in 0..30 {
        let mut rng = stream(SEED, Domain::Test, 5000 + i);
        let mut draw = || (rng.random_range(0.2..3.0f64) * 100.0).round() / 100.0;
        let (lo, hi, x, y) = (draw(), draw(), draw(), draw());
        if lo == hi {
            continue;
        }
        let ds = ClusteredDataset::new(vec![
            PopulationSample::from_vecs("a", vec![vec![lo, x], vec![hi]]).unwrap(),
            PopulationSample::from_vecs("b", vec![vec![lo], vec![hi, y]]).unwrap(),
        ])
        .unwrap();
        type Q = fn(f64) -> Vec<f64>;
        let bases: [(BasisFunction, Q); 2] =
            [(BasisFunction::linear(), |y| vec![1.0, y]), (BasisFunction::log(), |y| vec![1.0, y.ln()])];
        for (basis, q) in bases {
            let f = fit(&ds, &basis, &FitOptions::default()).unwrap();
            let pooled = ds.pooled_values();
            let c = pooled.iter().map(|&v| q(v)[1]).sum::<f64>() / pooled.len() as f64;
            let (a, b) = grid_argmax(|a, b| loglik(&ds, &q, &[a - b * c, b]));
            let oracle = [a - b * c, b];
            for (got, want) in f.theta_hat.as_slice().iter().zip(oracle) {
                worst = worst.max((got - want).abs());
            }
            cases += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        2,
        worst < 1e-3 && secs < 60.0,
        format!("{cases} fits on 6-observation datasets: max |theta - grid oracle| {worst:.2e} (< 1e-3), {secs:.1}s"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: AMSE, normal model, first parameter block, d = 5.

#[test]
fn criterion_03_amse_first_block() {
    let start = Instant::now();
    let cfg = StudyConfig::new(StudyKind::Amse, normal_block(1, 5).unwrap(), R, 0, SEED);
    let rep = run_study(&cfg).unwrap();
    // Reference values: (target, [CEL 0.05, CEL 0.10, EMP 0.05, EMP 0.10]).
    let reference = [
        (Target::Quantile(0), [18.31, 14.64, 25.58, 18.65]),
        (Target::Quantile(2), [10.01, 7.72, 14.08, 9.78]),
        (Target::Quantile(3), [10.90, 8.11, 13.79, 9.74]),
        (Target::Difference(0, 1), [31.44, 25.52, 45.93, 34.11]),
        (Target::Difference(0, 2), [27.21, 22.05, 40.54, 28.81]),
        (Target::Difference(0, 3), [28.83, 22.64, 40.26, 28.58]),
    ];
    // The reference values carry their own Monte Carlo error from 10000
    // replications; with the same per-replication spread the standard
    // error of the difference is se * sqrt(1 + R / 10000).
    let inflate = (1.0 + R as f64 / 10_000.0).sqrt();
    let (mut within, mut ordered, mut worst_z) = (0, 0, 0.0f64);
    let mut cells = Vec::new();
    for (target, values) in reference {
        for (a, alpha) in [0.05, 0.10].into_iter().enumerate() {
            let cel = rep.amse_cell(Method::Cel, target, alpha).unwrap();
            let emp = rep.amse_cell(Method::Emp, target, alpha).unwrap();
            for (c, want) in [(cel, values[a]), (emp, values[2 + a])] {
                let z = (c.value - want).abs() / (c.se * inflate);
                worst_z = worst_z.max(z);
                within += (z <= 3.0) as usize;
            }
            ordered += (cel.value < emp.value) as usize;
            cells.push(format!("{}@{alpha}: {:.2}/{:.2}", target.label(), cel.value, emp.value));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        3,
        within == 24 && ordered == 12,
        format!(
            "R={R}: {within}/24 values within 3 SE of reference (max {worst_z:.2} SE), CEL < EMP in {ordered}/12 cells; \
             CEL/EMP {}; {secs:.0}s",
            cells.join(", ")
        ),
    );
}

// ---------------------------------------------------------------------------
// Criteria 4 and 5 share one run per cluster size: the first normal block
// with bootstrap intervals, Wald intervals and all monitoring tests.

fn first_block_runs() -> &'static [(usize, StudyReport, f64)] {
    static RUNS: OnceLock<Vec<(usize, StudyReport, f64)>> = OnceLock::new();
    RUNS.get_or_init(|| {
        [5, 10]
            .into_iter()
            .map(|d| {
                let start = Instant::now();
                let mut cfg = StudyConfig::new(StudyKind::Power, normal_block(1, d).unwrap(), R, B, SEED);
                cfg.methods = vec![Method::Cel, Method::Wald, Method::W1, Method::W2, Method::W3];
                cfg.alphas = vec![0.05, 0.10];
                (d, run_study(&cfg).unwrap(), start.elapsed().as_secs_f64())
            })
            .collect()
    })
}

#[test]
fn criterion_04_coverage_first_block() {
    let runs = first_block_runs();
    let (mut cel_ok, mut cel_n, mut wald_ok, mut wald_n) = (0, 0, 0, 0);
    let mut cel_vals = Vec::new();
    let mut wald_vals = Vec::new();
    for (d, rep, _) in runs {
        for alpha in [0.05, 0.10] {
            for k in 1..4 {
                let c = rep.coverage_cell(Method::Cel, Target::Difference(0, k), alpha).unwrap();
                cel_n += 1;
                cel_ok += (92.5..=96.0).contains(&c.percent) as usize;
                cel_vals.push(format!("{:.1}", c.percent));
            }
            let w = rep.coverage_cell(Method::Wald, Target::Quantile(0), alpha).unwrap();
            wald_n += 1;
            wald_ok += (w.percent < 90.0) as usize;
            wald_vals.push(format!("d={d}@{alpha}: {:.1}", w.percent));
        }
    }
    let secs: f64 = runs.iter().map(|r| r.2).sum();
    report(
        4,
        cel_ok == cel_n && wald_ok == wald_n,
        format!(
            "R={R}, B={B}: CEL dxi coverage in [92.5, 96.0] for {cel_ok}/{cel_n} cells ({}); Wald xi_0 coverage < 90 for \
             {wald_ok}/{wald_n} ({}); shared run {secs:.0}s",
            cel_vals.join(" "),
            wald_vals.join(", ")
        ),
    );
}

#[test]
fn criterion_05_rejection_rates_first_block() {
    let runs = first_block_runs();
    let power_reference = [(5, 83.8), (10, 92.7)];
    let mut pass = true;
    let mut parts = Vec::new();
    for (d, rep, _) in runs {
        let size = rep.rejection_cell(Method::Cel, 1, 0.05).unwrap().percent;
        let w1 = rep.rejection_cell(Method::W1, 1, 0.05).unwrap().percent;
        let power = rep.rejection_cell(Method::Cel, 3, 0.05).unwrap().percent;
        let want = power_reference.iter().find(|p| p.0 == *d).unwrap().1;
        pass &= (4.0..=8.0).contains(&size) && w1 > 10.0 && (power - want).abs() <= 4.0;
        parts.push(format!(
            "d={d}: CEL size {size:.2}% (in [4, 8]), W1 size {w1:.2}% (> 10), CEL power vs H_3,0 {power:.2}% (reference {want}, +-4)"
        ));
    }
    report(5, pass, format!("R={R}, B={B}: {}", parts.join("; ")));
}

#[test]
fn criterion_06_counterexample_1() {
    let start = Instant::now();
    let cfg = StudyConfig::new(StudyKind::Counterexample1, counterexample1(10), R, B, SEED);
    let rep = run_study(&cfg).unwrap();
    let cel = rep.rejection_cell(Method::Cel, 1, 0.05).unwrap().percent;
    let cel10 = rep.rejection_cell(Method::Cel, 1, 0.10).unwrap().percent;
    let w: Vec<f64> =
        [Method::W1, Method::W2, Method::W3].iter().map(|&m| rep.rejection_cell(m, 1, 0.05).unwrap().percent).collect();
    let secs = start.elapsed().as_secs_f64();
    report(
        6,
        w[0] > 95.0 && cel < 2.0,
        format!(
            "R={R}, B={B}: W1 {:.2}% (> 95; W2 {:.2}%, W3 {:.2}%), CEL H(1) {cel:.2}% (< 2; H(2) {cel10:.2}%); {secs:.0}s",
            w[0], w[1], w[2]
        ),
    );
}

#[test]
fn criterion_07_counterexample_2() {
    let start = Instant::now();
    let cfg = StudyConfig::new(StudyKind::Counterexample2, counterexample2(10), R, B, SEED);
    let rep = run_study(&cfg).unwrap();
    let cel = rep.rejection_cell(Method::Cel, 1, 0.05).unwrap().percent;
    let cel10 = rep.rejection_cell(Method::Cel, 1, 0.10).unwrap().percent;
    let w: Vec<f64> =
        [Method::W1, Method::W2, Method::W3].iter().map(|&m| rep.rejection_cell(m, 1, 0.05).unwrap().percent).collect();
    let secs = start.elapsed().as_secs_f64();
    report(
        7,
        cel > 95.0 && w[0] < 20.0,
        format!(
            "R={R}, B={B}: CEL power H(1) {cel:.2}% (> 95; H(2) {cel10:.2}%), W1 {:.2}% (< 20; W2 {:.2}%, W3 {:.2}%); {secs:.0}s",
            w[0], w[1], w[2]
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: generator fidelity.

fn within_cluster_correlation(pop: &PopulationSample) -> f64 {
    let all = pop.flat_values();
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let var = all.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
    let (mut cross, mut pairs) = (0.0, 0.0);
    for c in pop.clusters() {
        let s: f64 = c.observations().iter().map(|y| y - mean).sum();
        let ss: f64 = c.observations().iter().map(|y| (y - mean) * (y - mean)).sum();
        cross += s * s - ss;
        pairs += (c.len() * (c.len() - 1)) as f64;
    }
    cross / pairs / var
}

#[test]
fn criterion_08_generator_fidelity() {
    let start = Instant::now();
    let gamma = GammaREConfig { a: vec![8.0], b: 14.0, beta: vec![1.0], n: vec![100_000], d: 5 };
    let g = gen_gamma_re(&gamma, SEED).unwrap();
    let corr = within_cluster_correlation(g.population(0));

    let normal =
        NormalREConfig { mu: vec![15.5], sigma2_gamma: vec![1.44], sigma2_eps: vec![4.0], n: vec![100_000], d: 5 };
    let icc = within_cluster_correlation(gen_normal_re(&normal, SEED).unwrap().population(0));

    let margin = GammaREConfig { a: vec![8.0], b: 14.0, beta: vec![1.05], n: vec![100_000], d: 1 };
    let y = gen_gamma_re(&margin, SEED + 1).unwrap().population(0).flat_values();
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let se = (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0) / n).sqrt();
    let z = (mean - 8.0 / 1.05).abs() / se;
    let secs = start.elapsed().as_secs_f64();
    report(
        8,
        (corr - 8.0 / 22.0).abs() < 0.01 && (icc - 1.44 / 5.44).abs() < 0.01 && z < 3.0 && secs < 60.0,
        format!(
            "1e5 clusters: gamma corr {corr:.4} vs {:.4}, normal ICC {icc:.4} vs {:.4} (both +-0.01), gamma mean {mean:.4} vs {:.4} \
             ({z:.2} SE < 3); {secs:.1}s",
            8.0 / 22.0,
            1.44 / 5.44,
            8.0 / 1.05
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: plug-in and bootstrap variances against sampling variances.

#[test]
fn criterion_09_variance_concordance() {
    let start = Instant::now();
    let alpha = 0.05;
    let model = normal_model([380, 450, 600, 600], [1.44, 1.44, 1.0, 1.0], 5);
    let basis = model.basis();
    struct Draw {
        xi: Vec<f64>,
        plugin: Vec<f64>,
    }
    let draws: Vec<Draw> = (0..R as u64)
        .into_par_iter()
        .map(|i| {
            let ds = model.generate(stream(SEED, Domain::Test, 90_000 + i).random()).unwrap();
            let f = fit(&ds, &basis, &FitOptions::default()).unwrap();
            let comp = estimate_components(&ds, &f).unwrap();
            let cov = quantile_covariance(&comp, &f, &[alpha]).unwrap();
            let xi = (0..4).map(|r| cel_quantile(&fitted_cdf(&f, r).unwrap(), alpha).unwrap()).collect();
            Draw { xi, plugin: (0..4).map(|r| cov.variance(r)).collect() }
        })
        .collect();
    let var = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)
    };
    let mut plug_ratios = Vec::new();
    for r in 0..4 {
        let xi: Vec<f64> = draws.iter().map(|d| d.xi[r]).collect();
        let plug = draws.iter().map(|d| d.plugin[r]).sum::<f64>() / draws.len() as f64;
        plug_ratios.push(plug / var(&xi));
    }

    // Bootstrap standard deviations of the differences on the first 100
    // datasets, averaged, against their sampling standard deviations.
    let boot_sd: Vec<Vec<f64>> = (0..100u64)
        .map(|i| {
            let ds = model.generate(stream(SEED, Domain::Test, 90_000 + i).random()).unwrap();
            let f = fit(&ds, &basis, &FitOptions::default()).unwrap();
            let reps = bootstrap_quantiles(&ds, &f, &[alpha], 199, SEED + i).unwrap();
            let x0 = reps.column(0, 0);
            (1..4)
                .map(|k| {
                    let diff: Vec<f64> = x0.iter().zip(reps.column(k, 0)).map(|(a, b)| a - b).collect();
                    var(&diff).sqrt()
                })
                .collect()
        })
        .collect();
    let mut boot_ratios = Vec::new();
    for k in 1..4 {
        let diff: Vec<f64> = draws.iter().map(|d| d.xi[0] - d.xi[k]).collect();
        let mean_boot = boot_sd.iter().map(|s| s[k - 1]).sum::<f64>() / boot_sd.len() as f64;
        boot_ratios.push(mean_boot / var(&diff).sqrt());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = plug_ratios.iter().all(|r| (r - 1.0).abs() < 0.20) && boot_ratios.iter().all(|r| (r - 1.0).abs() < 0.15);
    let fmt = |v: &[f64]| v.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(", ");
    report(
        9,
        pass,
        format!(
            "alpha={alpha}, {R} datasets: plug-in / MC variance of xi_r = [{}] (within 20%); mean bootstrap SD / sampling SD of \
             dxi_0k over 100 datasets x B=199 = [{}] (within 15%); {secs:.0}s",
            fmt(&plug_ratios),
            fmt(&boot_ratios)
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 10: byte-identical CLI output.

fn cli(args: &[&str]) -> Vec<u8> {
    let out =
        Command::new(env!("CARGO_BIN_EXE_drm-monitor")).args(args).env_remove("DRM_MONITOR_THREADS").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

#[test]
fn criterion_10_cli_determinism() {
    let start = Instant::now();
    let dir = tempfile::TempDir::new().unwrap();
    let data = dir.path().join("data.csv");
    normal_block(1, 5).unwrap().generate(SEED).unwrap().write_csv(&data).unwrap();
    let data = data.to_str().unwrap();
    let invocations: Vec<Vec<&str>> = vec![
        vec!["simulate", "--preset", "table5-block1", "--R", "50", "--B", "199", "--seed", "7"],
        vec!["simulate", "--preset", "table2-block3", "--R", "100", "--seed", "3"],
        vec!["test", "--input", data, "--pop1", "3", "--B", "999", "--seed", "5"],
        vec!["test", "--input", data, "--pop1", "1", "--method", "w3", "--seed", "5"],
        vec!["fit", "--input", data, "--basis", "y2,ylogy,logy2", "--alpha", "0.05,0.1", "--diagnostics", "--B", "199"],
        vec!["anova", "--input", data],
    ];
    let mut identical = 0;
    for args in &invocations {
        let mut parallel = args.clone();
        parallel.extend(["--quiet", "--no-timing", "--threads", "8"]);
        let mut serial = args.clone();
        serial.extend(["--quiet", "--no-timing", "--serial"]);
        let a = cli(&parallel);
        let b = cli(&parallel);
        let c = cli(&serial);
        identical += (a == b && a == c && !a.is_empty()) as usize;
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        10,
        identical == invocations.len(),
        format!(
            "{identical}/{} invocations byte-identical across two --threads 8 runs and a --serial run; {secs:.0}s",
            invocations.len()
        ),
    );
}
