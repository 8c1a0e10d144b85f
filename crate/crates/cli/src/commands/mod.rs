pub mod anova;
pub mod fit;
pub mod simulate;

use std::path::PathBuf;

use drm_core::{BasisFunction, ClusteredDataset};

use crate::manifest::RunManifest;
use crate::CliError;

/// Read and parse the input CSV, recording its digest.
pub fn load_input(
    path: &PathBuf,
    baseline: Option<&str>,
    manifest: &mut RunManifest,
) -> Result<ClusteredDataset, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Run(format!("cannot read {}: {e}", path.display())))?;
    manifest.record_input(&bytes);
    let ds = ClusteredDataset::parse_csv(&bytes, path)?;
    Ok(match baseline {
        Some(label) => ds.with_baseline(label).map_err(|e| CliError::Usage(e.to_string()))?,
        None => ds,
    })
}

pub fn parse_bases(names: &[String]) -> Result<Vec<BasisFunction>, CliError> {
    names.iter().map(|n| BasisFunction::from_name(n.trim()).map_err(|e| CliError::Usage(e.to_string()))).collect()
}

pub fn check_levels(name: &str, values: &[f64]) -> Result<(), CliError> {
    if values.is_empty() || values.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(CliError::Usage(format!("{name} values must lie strictly between 0 and 1")));
    }
    Ok(())
}

pub fn population_index(ds: &ClusteredDataset, label: &str) -> Result<usize, CliError> {
    ds.index_of(label).ok_or_else(|| {
        let known: Vec<&str> = ds.populations().iter().map(|p| p.label()).collect();
        CliError::Usage(format!("no population labelled {label:?} (have {known:?})"))
    })
}
