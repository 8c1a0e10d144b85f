#![allow(dead_code)]

use drm_core::{ClusteredDataset, PopulationSample};
use rand::Rng;

/// A dataset in which every population contains each of `anchors`, so no
/// direction separates the populations and the maximizer exists.
pub fn anchored_dataset(
    rng: &mut impl Rng,
    n_pops: usize,
    anchors: &[f64],
    extra_clusters: usize,
    max_size: usize,
) -> ClusteredDataset {
    let pops = (0..n_pops)
        .map(|k| {
            let mut clusters = vec![anchors.to_vec()];
            for _ in 0..extra_clusters {
                let size = rng.random_range(1..=max_size);
                clusters.push((0..size).map(|_| rng.random_range(0.2..3.0)).collect());
            }
            PopulationSample::from_vecs(format!("p{k}"), clusters).unwrap()
        })
        .collect();
    ClusteredDataset::new(pops).unwrap()
}

/// `l(theta)` written out directly: `theta` holds blocks `1..=m` of length
/// `q(y).len()`, and `rho_k` is the share of observations in population k.
pub fn loglik_oracle(ds: &ClusteredDataset, q: impl Fn(f64) -> Vec<f64>, theta: &[f64]) -> f64 {
    let n = ds.n_obs() as f64;
    let rho: Vec<f64> = ds.populations().iter().map(|p| p.n_obs() as f64 / n).collect();
    let mut total = 0.0;
    for (k, _, y) in ds.iter_obs() {
        let x = q(y);
        let p = x.len();
        let eta = |r: usize| -> f64 {
            if r == 0 {
                0.0
            } else {
                theta[(r - 1) * p..r * p].iter().zip(&x).map(|(t, x)| t * x).sum()
            }
        };
        let denom: f64 = (0..rho.len()).map(|r| rho[r] * eta(r).exp()).sum();
        total += eta(k) - denom.ln();
    }
    total
}

pub fn linear(y: f64) -> Vec<f64> {
    vec![1.0, y]
}

pub fn quadratic(y: f64) -> Vec<f64> {
    vec![1.0, y, y * y]
}

pub fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
