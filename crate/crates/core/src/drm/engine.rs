//! Flattened design and the damped Newton solver behind [`super::fit`].
//!
//! The profile log composite EL is, observation by observation, a
//! multinomial-logit log likelihood with offsets `log rho_r`:
//! `l(theta) = sum_i w_i { eta_k(i) - log sum_r rho_r exp(eta_r) }` with
//! `eta_r = theta_r' q(y_i)` and `eta_0 = 0`. Observation weights `w_i` are
//! 1 for an ordinary fit and the cluster multiplicities for a bootstrap
//! resample, which lets a resample be fitted without materializing it.
//!
//! Internally the non-constant basis components are centered and scaled on
//! the pooled sample. This is a linear reparametrization of `theta`; the
//! fitted weights and CDFs are unaffected, and results are mapped back to
//! the original basis before they leave this module.

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisFunction;
use crate::data::ClusteredDataset;
use crate::error::{Error, Result};

/// Observations of a dataset in `(k, j, l)` order with their basis values.
#[derive(Debug, Clone)]
pub(crate) struct Design {
    pub m: usize,
    pub q: usize,
    pub values: Vec<f64>,
    pub pop: Vec<usize>,
    /// Global cluster index of each observation.
    pub cluster: Vec<usize>,
    /// Population of each global cluster.
    pub cluster_pop: Vec<usize>,
    /// `n x q`, row-major, original basis.
    pub raw: Vec<f64>,
    /// `n x q`, standardized basis.
    pub std: Vec<f64>,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    pub labels: Vec<String>,
}

impl Design {
    pub fn new(ds: &ClusteredDataset, basis: &BasisFunction) -> Result<Self> {
        let values = ds.pooled_values();
        basis.check_applicable(&values)?;
        let q = basis.dim();
        let n = values.len();
        let mut pop = Vec::with_capacity(n);
        let mut cluster = Vec::with_capacity(n);
        let mut cluster_pop = Vec::new();
        let mut offset = 0;
        for (k, p) in ds.populations().iter().enumerate() {
            for (j, c) in p.clusters().iter().enumerate() {
                cluster_pop.push(k);
                for _ in 0..c.len() {
                    pop.push(k);
                    cluster.push(offset + j);
                }
            }
            offset += p.n_clusters();
        }
        let mut raw = vec![0.0; n * q];
        for (i, &v) in values.iter().enumerate() {
            basis.eval_into(v, &mut raw[i * q..(i + 1) * q]);
        }
        let mut center = vec![0.0; q];
        let mut scale = vec![1.0; q];
        for a in 1..q {
            let col = raw.iter().skip(a).step_by(q);
            let mean = col.clone().sum::<f64>() / n as f64;
            let var = col.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            center[a] = mean;
            scale[a] = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
        }
        let mut std = raw.clone();
        for row in std.chunks_mut(q) {
            for a in 1..q {
                row[a] = (row[a] - center[a]) / scale[a];
            }
        }
        Ok(Self {
            m: ds.m(),
            q,
            values,
            pop,
            cluster,
            cluster_pop,
            raw,
            std,
            center,
            scale,
            labels: ds.populations().iter().map(|p| p.label().to_string()).collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn dim(&self) -> usize {
        self.m * self.q
    }

    /// Original-basis parameters from standardized ones.
    pub fn theta_to_raw(&self, std: &[f64]) -> Vec<f64> {
        let q = self.q;
        let mut out = vec![0.0; std.len()];
        for (src, dst) in std.chunks(q).zip(out.chunks_mut(q)) {
            let mut c = src[0];
            for a in 1..q {
                dst[a] = src[a] / self.scale[a];
                c -= src[a] * self.center[a] / self.scale[a];
            }
            dst[0] = c;
        }
        out
    }

    pub fn theta_to_std(&self, raw: &[f64]) -> Vec<f64> {
        let q = self.q;
        let mut out = vec![0.0; raw.len()];
        for (src, dst) in raw.chunks(q).zip(out.chunks_mut(q)) {
            let mut c = src[0];
            for a in 1..q {
                dst[a] = src[a] * self.scale[a];
                c += src[a] * self.center[a];
            }
            dst[0] = c;
        }
        out
    }

    /// Original-basis gradient from the standardized one.
    pub fn gradient_to_raw(&self, std: &[f64]) -> Vec<f64> {
        let q = self.q;
        let mut out = vec![0.0; std.len()];
        for (src, dst) in std.chunks(q).zip(out.chunks_mut(q)) {
            dst[0] = src[0];
            for a in 1..q {
                dst[a] = self.scale[a] * src[a] + self.center[a] * src[0];
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Order {
    Value,
    Gradient,
    Hessian,
}

/// Log likelihood and derivatives at one parameter value.
#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub loglik: f64,
    pub gradient: Vec<f64>,
    /// Packed lower-triangular accumulator; see [`Evaluation::hessian`].
    hess_packed: Vec<f64>,
    m: usize,
    q: usize,
}

impl Evaluation {
    pub fn hessian(&self) -> DMatrix<f64> {
        let (m, q) = (self.m, self.q);
        let qq = q * (q + 1) / 2;
        let mut h = DMatrix::zeros(m * q, m * q);
        let mut pair = 0;
        for r in 0..m {
            for s in 0..=r {
                let block = &self.hess_packed[pair * qq..(pair + 1) * qq];
                let mut ab = 0;
                for a in 0..q {
                    for b in 0..=a {
                        let v = block[ab];
                        h[(r * q + a, s * q + b)] = v;
                        h[(r * q + b, s * q + a)] = v;
                        h[(s * q + a, r * q + b)] = v;
                        h[(s * q + b, r * q + a)] = v;
                        ab += 1;
                    }
                }
                pair += 1;
            }
        }
        h
    }
}

/// Evaluate the objective on `features` (`n x q`). `h_out`, when given,
/// receives the `n x (m+1)` matrix of `h_r(y_i; theta)`.
pub(crate) fn evaluate(
    design: &Design,
    features: &[f64],
    weights: Option<&[f64]>,
    log_rho: &[f64],
    theta: &[f64],
    order: Order,
    mut h_out: Option<&mut [f64]>,
) -> Result<Evaluation> {
    let (m, q) = (design.m, design.q);
    let mp1 = m + 1;
    let qq = q * (q + 1) / 2;
    let mut loglik = 0.0;
    let mut gradient = vec![0.0; if order == Order::Value { 0 } else { m * q }];
    let mut hess_packed = vec![0.0; if order == Order::Hessian { m * (m + 1) / 2 * qq } else { 0 }];
    let mut a = vec![0.0; mp1];
    let mut h = vec![0.0; mp1];
    let mut xx = vec![0.0; qq];

    for i in 0..design.n() {
        let w = weights.map_or(1.0, |w| w[i]);
        if w == 0.0 {
            if let Some(out) = h_out.as_deref_mut() {
                out[i * mp1..(i + 1) * mp1].fill(0.0);
            }
            continue;
        }
        let x = &features[i * q..(i + 1) * q];
        a[0] = log_rho[0];
        let mut mx = a[0];
        for r in 1..mp1 {
            let t = &theta[(r - 1) * q..r * q];
            let mut eta = 0.0;
            for c in 0..q {
                eta += t[c] * x[c];
            }
            a[r] = log_rho[r] + eta;
            if a[r] > mx {
                mx = a[r];
            }
        }
        let mut s = 0.0;
        for r in 0..mp1 {
            h[r] = (a[r] - mx).exp();
            s += h[r];
        }
        let lse = mx + s.ln();
        let k = design.pop[i];
        loglik += w * (a[k] - log_rho[k] - lse);
        for v in h.iter_mut() {
            *v /= s;
        }
        if let Some(out) = h_out.as_deref_mut() {
            out[i * mp1..(i + 1) * mp1].copy_from_slice(&h);
        }
        if order == Order::Value {
            continue;
        }
        for r in 1..mp1 {
            let c = w * (if k == r { 1.0 } else { 0.0 } - h[r]);
            let g = &mut gradient[(r - 1) * q..r * q];
            for (gc, xc) in g.iter_mut().zip(x) {
                *gc += c * xc;
            }
        }
        if order != Order::Hessian {
            continue;
        }
        let mut ab = 0;
        for a_ in 0..q {
            for b in 0..=a_ {
                xx[ab] = x[a_] * x[b];
                ab += 1;
            }
        }
        let mut pair = 0;
        for r in 1..mp1 {
            for s_ in 1..=r {
                let coef = w * (if r == s_ { h[r] } else { 0.0 } - h[r] * h[s_]);
                let block = &mut hess_packed[pair * qq..(pair + 1) * qq];
                for (hb, v) in block.iter_mut().zip(&xx) {
                    *hb -= coef * v;
                }
                pair += 1;
            }
        }
    }

    if !loglik.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { context: "profile log composite EL".into() });
    }
    Ok(Evaluation { loglik, gradient, hess_packed, m, q })
}

pub(crate) struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Take one Newton step past `tol`.
    pub polish: bool,
}

pub(crate) struct NewtonResult {
    /// Standardized coordinates.
    pub theta: Vec<f64>,
    pub loglik: f64,
    /// Norm of the gradient in the original basis.
    pub gradient_norm: f64,
    pub iterations: usize,
    /// `n x (m+1)` matrix of `h_r(y_i)` at the solution.
    pub h: Vec<f64>,
}

const MAX_HALVINGS: usize = 60;
const SEPARATION_NORM: f64 = 1e3;
const RAY_CHECK_NORM: f64 = 10.0;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn raw_gradient_norm(design: &Design, g: &[f64]) -> f64 {
    norm(&design.gradient_to_raw(g))
}

fn largest_block(design: &Design, theta: &[f64]) -> usize {
    theta
        .chunks(design.q)
        .enumerate()
        .map(|(r, b)| (r + 1, norm(b)))
        .fold((1, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc })
        .0
}

fn separated(design: &Design, theta: &[f64]) -> Error {
    let population = largest_block(design, theta);
    Error::Separated { population, label: design.labels[population].clone() }
}

type Step = (Vec<f64>, Evaluation, f64);

/// Damped Newton step with halving line search, falling back to steepest
/// ascent when the Newton system cannot be solved. A candidate is accepted
/// if it raises the objective, or keeps it within rounding and shrinks the
/// gradient.
#[allow(clippy::too_many_arguments)]
fn line_search(
    design: &Design,
    weights: Option<&[f64]>,
    log_rho: &[f64],
    theta: &[f64],
    cur: &Evaluation,
    gnorm: f64,
    h_cand: &mut [f64],
) -> Result<Option<Step>> {
    let neg_hess = -cur.hessian();
    let g = DVector::from_column_slice(&cur.gradient);
    let newton = neg_hess.cholesky().map(|c| c.solve(&g));
    let mut directions: Vec<DVector<f64>> = Vec::with_capacity(2);
    if let Some(d) = newton {
        if d.iter().all(|x| x.is_finite()) {
            directions.push(d);
        }
    }
    directions.push(g);

    let slack = 1e-12 * cur.loglik.abs().max(1.0);
    for dir in &directions {
        let mut t = 1.0;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = theta.iter().zip(dir.iter()).map(|(x, d)| x + t * d).collect();
            match evaluate(design, &design.std, weights, log_rho, &cand, Order::Hessian, Some(h_cand)) {
                Ok(ev) => {
                    let cand_gnorm = raw_gradient_norm(design, &ev.gradient);
                    if ev.loglik > cur.loglik || (ev.loglik >= cur.loglik - slack && cand_gnorm < gnorm) {
                        return Ok(Some((cand, ev, cand_gnorm)));
                    }
                }
                Err(Error::NonFinite { .. }) => {}
                Err(e) => return Err(e),
            }
            t *= 0.5;
        }
    }
    Ok(None)
}

/// Maximize the concave objective until the gradient norm in the original
/// basis is at most `tol`.
pub(crate) fn maximize(
    design: &Design,
    weights: Option<&[f64]>,
    rho: &[f64],
    init_std: Vec<f64>,
    opts: &NewtonOptions,
) -> Result<NewtonResult> {
    let n = design.n();
    let mp1 = design.m + 1;
    let log_rho: Vec<f64> = rho.iter().map(|r| r.ln()).collect();

    let mut theta = init_std;
    let mut h_cur = vec![0.0; n * mp1];
    let mut h_cand = vec![0.0; n * mp1];
    let mut cur = evaluate(design, &design.std, weights, &log_rho, &theta, Order::Hessian, Some(&mut h_cur))?;
    let mut gnorm = raw_gradient_norm(design, &cur.gradient);
    let mut iterations = 0;

    while gnorm > opts.tol {
        if iterations >= opts.max_iter {
            return Err(Error::NotConverged {
                iterations,
                gradient_norm: gnorm,
                last_theta: design.theta_to_raw(&theta),
            });
        }
        iterations += 1;
        let Some((cand, ev, cand_gnorm)) = line_search(design, weights, &log_rho, &theta, &cur, gnorm, &mut h_cand)?
        else {
            // No ascent direction is numerically resolvable: the iterate is
            // as good as floating point allows.
            return Err(Error::NotConverged {
                iterations,
                gradient_norm: gnorm,
                last_theta: design.theta_to_raw(&theta),
            });
        };
        if norm(&cand) > SEPARATION_NORM && cand_gnorm >= gnorm {
            return Err(separated(design, &cand));
        }
        theta = cand;
        cur = ev;
        gnorm = cand_gnorm;
        std::mem::swap(&mut h_cur, &mut h_cand);
    }

    // Newton converges quadratically, so one more step drives the
    // constraint residuals to rounding level at the cost of one evaluation.
    if opts.polish && gnorm > 0.0 {
        if let Some((cand, ev, cand_gnorm)) = line_search(design, weights, &log_rho, &theta, &cur, gnorm, &mut h_cand)?
        {
            if cand_gnorm < gnorm {
                theta = cand;
                cur = ev;
                gnorm = cand_gnorm;
                std::mem::swap(&mut h_cur, &mut h_cand);
            }
        }
    }

    // A maximizer far from the origin may be a supremum approached along a
    // ray (separated samples); a genuine maximum drops off when the
    // parameter is doubled.
    let sup = theta.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if sup > RAY_CHECK_NORM {
        let doubled: Vec<f64> = theta.iter().map(|x| 2.0 * x).collect();
        let further = evaluate(design, &design.std, weights, &log_rho, &doubled, Order::Value, None);
        if let Ok(ev) = further {
            if ev.loglik >= cur.loglik - 1e-9 * cur.loglik.abs().max(1.0) {
                return Err(separated(design, &theta));
            }
        }
    }

    Ok(NewtonResult { theta, loglik: cur.loglik, gradient_norm: gnorm, iterations, h: h_cur })
}
