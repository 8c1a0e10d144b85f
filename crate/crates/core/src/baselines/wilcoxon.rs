use rand::seq::SliceRandom;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::PopulationSample;
use crate::error::{Error, Result};
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WilcoxonVariant {
    /// One-sided rank-sum test at `level`.
    W1,
    /// The same p-value compared with `level / 2`.
    W2,
    /// Split the data into two random halves; reject iff both halves give
    /// `p < level`.
    W3,
}

impl WilcoxonVariant {
    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "w1" => Ok(Self::W1),
            "w2" => Ok(Self::W2),
            "w3" => Ok(Self::W3),
            other => Err(Error::InvalidArgument(format!("unknown Wilcoxon variant {other:?}"))),
        }
    }
}

/// What W3 splits into halves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitLevel {
    Cluster,
    Observation,
}

#[derive(Debug, Clone, Serialize)]
pub struct WilcoxonResult {
    pub variant: WilcoxonVariant,
    /// Rank sum of the first sample in the pooled data (midranks for ties).
    pub statistic: f64,
    /// W1 and W2: the one-sided p-value. W3: the larger of the two halves'
    /// p-values, so that W3 rejects iff `p_value < level`.
    pub p_value: f64,
    /// The halves' p-values for W3; empty otherwise.
    pub split_p_values: Vec<f64>,
    pub level: f64,
    pub reject: bool,
}

/// One-sided rank-sum test of `Ha: x is stochastically smaller than y`,
/// by the normal approximation with tie-corrected variance and continuity
/// correction. Returns the rank sum of `x` and the p-value.
pub fn rank_sum_test(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidArgument("rank-sum test needs two nonempty samples".into()));
    }
    let (n0, n1) = (x.len() as f64, y.len() as f64);
    let mut pooled: Vec<(f64, bool)> = x.iter().map(|&v| (v, true)).chain(y.iter().map(|&v| (v, false))).collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pooled.len();
    let mut w = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let t = (j - i) as f64;
        let midrank = (i + 1 + j) as f64 / 2.0;
        w += midrank * pooled[i..j].iter().filter(|p| p.1).count() as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let nn = n as f64;
    let mean = n0 * (nn + 1.0) / 2.0;
    let var = n0 * n1 / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
    if !(var > 0.0) {
        return Ok((w, 1.0));
    }
    let z = (w - mean + 0.5) / var.sqrt();
    Ok((w, Normal::standard().cdf(z).clamp(0.0, 1.0)))
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("significance level must lie in (0, 1), got {level}")));
    }
    Ok(())
}

fn split_result(full: (f64, f64), halves: [(f64, f64); 2], level: f64) -> WilcoxonResult {
    let p = halves[0].1.max(halves[1].1);
    WilcoxonResult {
        variant: WilcoxonVariant::W3,
        statistic: full.0,
        p_value: p,
        split_p_values: vec![halves[0].1, halves[1].1],
        level,
        reject: p < level,
    }
}

fn halves<T: Clone>(items: &[T], rng: &mut impl rand::Rng) -> (Vec<T>, Vec<T>) {
    let mut v = items.to_vec();
    v.shuffle(rng);
    let b = v.split_off(v.len() / 2);
    (v, b)
}

/// Wilcoxon test of `Ha: sample0 is stochastically smaller than sample1`
/// on flat samples. W3 splits observations at random (seeded).
pub fn wilcoxon(
    sample0: &[f64],
    sample1: &[f64],
    variant: WilcoxonVariant,
    level: f64,
    seed: u64,
) -> Result<WilcoxonResult> {
    check_level(level)?;
    let full = rank_sum_test(sample0, sample1)?;
    match variant {
        WilcoxonVariant::W1 | WilcoxonVariant::W2 => {
            let threshold = if variant == WilcoxonVariant::W1 { level } else { level / 2.0 };
            Ok(WilcoxonResult {
                variant,
                statistic: full.0,
                p_value: full.1,
                split_p_values: Vec::new(),
                level,
                reject: full.1 < threshold,
            })
        }
        WilcoxonVariant::W3 => {
            if sample0.len() < 2 || sample1.len() < 2 {
                return Err(Error::InvalidArgument("W3 needs at least two observations per sample".into()));
            }
            let mut rng = stream(seed, Domain::Split, 0);
            let (a0, b0) = halves(sample0, &mut rng);
            let (a1, b1) = halves(sample1, &mut rng);
            Ok(split_result(full, [rank_sum_test(&a0, &a1)?, rank_sum_test(&b0, &b1)?], level))
        }
    }
}

/// As [`wilcoxon`] on clustered samples; W3 splits at `split` level.
pub fn wilcoxon_clustered(
    pop0: &PopulationSample,
    pop1: &PopulationSample,
    variant: WilcoxonVariant,
    level: f64,
    seed: u64,
    split: SplitLevel,
) -> Result<WilcoxonResult> {
    if variant != WilcoxonVariant::W3 || split == SplitLevel::Observation {
        return wilcoxon(&pop0.flat_values(), &pop1.flat_values(), variant, level, seed);
    }
    check_level(level)?;
    if pop0.n_clusters() < 2 || pop1.n_clusters() < 2 {
        return Err(Error::InvalidArgument("W3 with cluster splitting needs at least two clusters per sample".into()));
    }
    let full = rank_sum_test(&pop0.flat_values(), &pop1.flat_values())?;
    let mut rng = stream(seed, Domain::Split, 0);
    let flatten =
        |cs: Vec<crate::data::Cluster>| -> Vec<f64> { cs.iter().flat_map(|c| c.observations().to_vec()).collect() };
    let (a0, b0) = halves(pop0.clusters(), &mut rng);
    let (a1, b1) = halves(pop1.clusters(), &mut rng);
    let first = rank_sum_test(&flatten(a0), &flatten(a1))?;
    let second = rank_sum_test(&flatten(b0), &flatten(b1))?;
    Ok(split_result(full, [first, second], level))
}
