//! Quantile estimation and monitoring tests for clustered samples from
//! several populations linked by a density ratio model.

// `!(x > 0.0)` is used deliberately so NaN takes the failure branch, and
// index loops over populations mirror the block structure of theta.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod asymptotics;
pub mod baselines;
pub mod basis;
pub mod bootstrap;
pub mod data;
pub mod drm;
pub mod error;
pub mod kde;
pub mod rng;
pub mod simulate;

pub use basis::BasisFunction;
pub use data::{Cluster, ClusteredDataset, PopulationSample};
pub use drm::{cel_quantile, fit, fitted_cdf, DrmFit, DrmParameters, FitOptions, FittedCdf};
pub use error::{Error, Result};
