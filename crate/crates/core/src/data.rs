//! Clustered multi-sample data: populations of clusters of strength
//! measurements, CSV ingestion and validation diagnostics.
//!
//! Population 0 is the baseline of the density ratio model. Within a cluster
//! the order of observations carries no meaning, and neither does the order
//! of clusters within a population; every estimator in this crate is
//! invariant to both.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::basis::BasisFunction;
use crate::error::{Error, Result};

/// Cluster ids in order of appearance, and each cluster's observations.
type ClusterGroups = (Vec<String>, HashMap<String, Vec<f64>>);

pub const CSV_HEADER: [&str; 3] = ["population", "cluster", "value"];

/// Observations from one cluster (a lot or mill).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cluster {
    observations: Vec<f64>,
}

impl Cluster {
    pub fn new(observations: Vec<f64>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::InvalidData("cluster has no observations".into()));
        }
        if let Some(v) = observations.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite observation {v}")));
        }
        Ok(Self { observations })
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// The clusters sampled from one population.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationSample {
    label: String,
    clusters: Vec<Cluster>,
}

impl PopulationSample {
    pub fn new(label: impl Into<String>, clusters: Vec<Cluster>) -> Result<Self> {
        let label = label.into();
        if clusters.is_empty() {
            return Err(Error::InvalidData(format!("population {label:?} has no clusters")));
        }
        Ok(Self { label, clusters })
    }

    /// Convenience constructor from raw cluster vectors.
    pub fn from_vecs(label: impl Into<String>, clusters: Vec<Vec<f64>>) -> Result<Self> {
        let clusters = clusters.into_iter().map(Cluster::new).collect::<Result<Vec<_>>>()?;
        Self::new(label, clusters)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn n_obs(&self) -> usize {
        self.clusters.iter().map(Cluster::len).sum()
    }

    /// All observations, cluster by cluster.
    pub fn flat_values(&self) -> Vec<f64> {
        self.clusters.iter().flat_map(|c| c.observations.iter().copied()).collect()
    }
}

/// `m + 1` population samples; population 0 is the DRM baseline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusteredDataset {
    populations: Vec<PopulationSample>,
    nominal_cluster_size: Option<usize>,
}

impl ClusteredDataset {
    pub fn new(populations: Vec<PopulationSample>) -> Result<Self> {
        if populations.is_empty() {
            return Err(Error::InvalidData("dataset has no populations".into()));
        }
        let mut seen = HashMap::new();
        for (k, p) in populations.iter().enumerate() {
            if let Some(prev) = seen.insert(p.label.clone(), k) {
                return Err(Error::InvalidData(format!("populations {prev} and {k} share the label {:?}", p.label)));
            }
        }
        Ok(Self { populations, nominal_cluster_size: None })
    }

    pub fn with_nominal_cluster_size(mut self, d: usize) -> Self {
        self.nominal_cluster_size = Some(d);
        self
    }

    pub fn nominal_cluster_size(&self) -> Option<usize> {
        self.nominal_cluster_size
    }

    pub fn populations(&self) -> &[PopulationSample] {
        &self.populations
    }

    pub fn population(&self, k: usize) -> &PopulationSample {
        &self.populations[k]
    }

    /// Number of non-baseline populations.
    pub fn m(&self) -> usize {
        self.populations.len() - 1
    }

    pub fn n_populations(&self) -> usize {
        self.populations.len()
    }

    /// Total number of clusters `n`.
    pub fn n_clusters(&self) -> usize {
        self.populations.iter().map(PopulationSample::n_clusters).sum()
    }

    /// Total number of observations (`nd` for a common cluster size).
    pub fn n_obs(&self) -> usize {
        self.populations.iter().map(PopulationSample::n_obs).sum()
    }

    /// Sampling proportions `rho_k`, computed as observation shares.
    ///
    /// With a common cluster size this equals `n_k / n`. With ragged sizes
    /// the observation share is the value under which the fitted weights
    /// satisfy the distribution-function constraints exactly.
    pub fn rho(&self) -> Vec<f64> {
        let total = self.n_obs() as f64;
        self.populations.iter().map(|p| p.n_obs() as f64 / total).collect()
    }

    /// Cluster-count proportions `n_k / n`.
    pub fn cluster_rho(&self) -> Vec<f64> {
        let total = self.n_clusters() as f64;
        self.populations.iter().map(|p| p.n_clusters() as f64 / total).collect()
    }

    /// The common cluster size, if every cluster has the same size.
    pub fn common_cluster_size(&self) -> Option<usize> {
        let mut sizes = self.populations.iter().flat_map(|p| p.clusters.iter().map(Cluster::len));
        let first = sizes.next()?;
        sizes.all(|s| s == first).then_some(first)
    }

    /// Mean cluster size `nd / n`.
    pub fn mean_cluster_size(&self) -> f64 {
        self.n_obs() as f64 / self.n_clusters() as f64
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.populations.iter().position(|p| p.label == label)
    }

    /// Move the population named `label` to position 0 (the DRM baseline);
    /// the remaining populations keep their relative order.
    pub fn with_baseline(mut self, label: &str) -> Result<Self> {
        let k =
            self.index_of(label).ok_or_else(|| Error::InvalidArgument(format!("no population labelled {label:?}")))?;
        let baseline = self.populations.remove(k);
        self.populations.insert(0, baseline);
        Ok(self)
    }

    /// Keep only the listed populations, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut pops = Vec::with_capacity(indices.len());
        for &k in indices {
            let p = self
                .populations
                .get(k)
                .ok_or_else(|| Error::InvalidArgument(format!("population index {k} out of range")))?;
            pops.push(p.clone());
        }
        let mut ds = Self::new(pops)?;
        ds.nominal_cluster_size = self.nominal_cluster_size;
        Ok(ds)
    }

    /// Every observation as `(population, cluster, value)`.
    pub fn iter_obs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.populations.iter().enumerate().flat_map(|(k, p)| {
            p.clusters.iter().enumerate().flat_map(move |(j, c)| c.observations.iter().map(move |&v| (k, j, v)))
        })
    }

    /// All observations pooled across populations.
    pub fn pooled_values(&self) -> Vec<f64> {
        self.iter_obs().map(|(_, _, v)| v).collect()
    }

    /// Split every cluster into singleton clusters.
    pub fn into_singletons(&self) -> Self {
        let populations = self
            .populations
            .iter()
            .map(|p| PopulationSample {
                label: p.label.clone(),
                clusters: p
                    .clusters
                    .iter()
                    .flat_map(|c| c.observations.iter().map(|&v| Cluster { observations: vec![v] }))
                    .collect(),
            })
            .collect();
        Self { populations, nominal_cluster_size: Some(1) }
    }

    /// Apply `f` to every observation, keeping the grouping.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let mut populations = Vec::with_capacity(self.populations.len());
        for p in &self.populations {
            let clusters = p
                .clusters
                .iter()
                .map(|c| Cluster::new(c.observations.iter().map(|&v| f(v)).collect()))
                .collect::<Result<Vec<_>>>()?;
            populations.push(PopulationSample { label: p.label.clone(), clusters });
        }
        Ok(Self { populations, nominal_cluster_size: self.nominal_cluster_size })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |source| Error::Io { path: path.to_path_buf(), source };
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
        self.write_csv_to(&mut out).map_err(io_err)?;
        out.flush().map_err(io_err)
    }

    /// Writes the `population,cluster,value` layout; cluster ids are the
    /// 1-based position within the population. Values use the shortest
    /// representation that parses back to the same bits.
    pub fn write_csv_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "{}", CSV_HEADER.join(","))?;
        for p in &self.populations {
            if p.label.contains([',', '\n', '\r', '"']) {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidInput,
                    format!("population label {:?} cannot be written unquoted", p.label),
                ));
            }
            for (j, c) in p.clusters.iter().enumerate() {
                for v in &c.observations {
                    writeln!(out, "{},{},{:?}", p.label, j + 1, v)?;
                }
            }
        }
        Ok(())
    }

    /// Load the `population,cluster,value` CSV layout. Populations appear in
    /// order of first appearance; `baseline` moves one of them to index 0.
    pub fn load_csv(path: impl AsRef<Path>, baseline: Option<&str>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let ds = Self::parse_csv(&bytes, path)?;
        match baseline {
            Some(label) => ds.with_baseline(label),
            None => Ok(ds),
        }
    }

    pub fn parse_csv(bytes: &[u8], path: &Path) -> Result<Self> {
        let parse_err = |line: u64, message: String| Error::Parse { path: path.to_path_buf(), line, message };
        let mut reader =
            csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(bytes);

        let mut header_seen = false;
        let mut order: Vec<String> = Vec::new();
        let mut groups: HashMap<String, ClusterGroups> = HashMap::new();

        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                parse_err(line, e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() == 1 && record.get(0) == Some("") {
                continue;
            }
            let is_header = record.iter().eq(CSV_HEADER.iter().copied());
            if !header_seen {
                if !is_header {
                    return Err(parse_err(line, format!("expected header `{}`", CSV_HEADER.join(","))));
                }
                header_seen = true;
                continue;
            }
            if is_header {
                return Err(parse_err(line, "duplicate header row".into()));
            }
            if record.len() != 3 {
                return Err(parse_err(line, format!("expected 3 fields, found {}", record.len())));
            }
            let (pop, cluster, raw) = (&record[0], &record[1], &record[2]);
            if pop.is_empty() || cluster.is_empty() {
                return Err(parse_err(line, "empty population or cluster identifier".into()));
            }
            let value: f64 = raw.parse().map_err(|_| parse_err(line, format!("value {raw:?} is not a number")))?;
            if !value.is_finite() {
                return Err(parse_err(line, format!("value {raw:?} is not finite")));
            }
            let entry = groups.entry(pop.to_string()).or_insert_with(|| {
                order.push(pop.to_string());
                (Vec::new(), HashMap::new())
            });
            entry
                .1
                .entry(cluster.to_string())
                .or_insert_with(|| {
                    entry.0.push(cluster.to_string());
                    Vec::new()
                })
                .push(value);
        }

        if !header_seen {
            return Err(parse_err(0, "empty file".into()));
        }
        if order.is_empty() {
            return Err(parse_err(0, "no data rows".into()));
        }

        let mut populations = Vec::with_capacity(order.len());
        for label in order {
            let (cluster_order, mut clusters) = groups.remove(&label).expect("grouped label");
            let clusters = cluster_order
                .iter()
                .map(|id| Cluster { observations: clusters.remove(id).expect("grouped cluster") })
                .collect();
            populations.push(PopulationSample { label, clusters });
        }
        Self::new(populations)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

/// A finding from [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    NonPositiveValue { population: String, cluster: usize, value: f64 },
    SingletonPopulation { population: String },
    RaggedClusterSizes { sizes: Vec<usize> },
    DegenerateBasis { message: String },
}

impl Diagnostic {
    pub fn severity(&self) -> Severity {
        match self {
            Diagnostic::NonPositiveValue { .. } | Diagnostic::DegenerateBasis { .. } => Severity::Error,
            Diagnostic::SingletonPopulation { .. } | Diagnostic::RaggedClusterSizes { .. } => Severity::Warning,
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::NonPositiveValue { population, cluster, value } => write!(
                f,
                "population {population:?} cluster {cluster}: value {value} is not positive but the basis takes logarithms"
            ),
            Diagnostic::SingletonPopulation { population } => write!(
                f,
                "population {population:?} has a single cluster; bootstrap inference needs at least two"
            ),
            Diagnostic::RaggedClusterSizes { sizes } => write!(
                f,
                "cluster sizes vary ({sizes:?}); variance formulas use the mean cluster size"
            ),
            Diagnostic::DegenerateBasis { message } => write!(f, "degenerate basis: {message}"),
        }
    }
}

/// Check a dataset against a basis. Never fails; returns every finding.
pub fn validate(ds: &ClusteredDataset, basis: &BasisFunction) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if basis.requires_positive() {
        for p in ds.populations() {
            for (j, c) in p.clusters().iter().enumerate() {
                for &v in c.observations() {
                    if v <= 0.0 {
                        out.push(Diagnostic::NonPositiveValue {
                            population: p.label().to_string(),
                            cluster: j,
                            value: v,
                        });
                    }
                }
            }
        }
    }
    for p in ds.populations() {
        if p.n_clusters() < 2 {
            out.push(Diagnostic::SingletonPopulation { population: p.label().to_string() });
        }
    }
    if ds.common_cluster_size().is_none() {
        let mut sizes: Vec<usize> =
            ds.populations().iter().flat_map(|p| p.clusters().iter().map(Cluster::len)).collect();
        sizes.sort_unstable();
        sizes.dedup();
        out.push(Diagnostic::RaggedClusterSizes { sizes });
    }
    let positivity_ok = !out.iter().any(|d| matches!(d, Diagnostic::NonPositiveValue { .. }));
    if positivity_ok {
        if let Err(e) = basis.check_independence(&ds.pooled_values()) {
            out.push(Diagnostic::DegenerateBasis { message: e.to_string() });
        }
    }
    out
}
