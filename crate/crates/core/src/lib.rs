//! Parametric bootstrap inference for group-sparse linear regression.
//!
//! The pipeline fits a group (or block) lasso, thresholds and refits it to get
//! a point estimate, then simulates responses from that estimate and refits
//! the penalized problem to approximate the sampling distribution of each
//! group's coefficients. From the bootstrap sample it builds per-group
//! confidence regions and significance tests.
//!
//! Modules:
//! - [`model`]: partitions, designs, coefficients, fits
//! - [`solver`]: proximal maps, coordinate descent, paths, CV
//! - [`pointest`]: thresholding, least-squares refit, noise level
//! - [`bootstrap`]: replicate engine, quantiles, tests, regions
//! - [`designs`]: synthetic designs, coefficient layouts, groupings, CSV input
//! - [`experiments`]: simulation studies, metrics, tables, diagnostics

pub mod bootstrap;
pub mod designs;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod model;
pub mod pointest;
pub mod solver;

pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{Coefficients, Exponent, FitResult, GroupPartition, GroupedDesign};
