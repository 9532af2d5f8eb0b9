//! Dataset selection with a two-level Gaussian Thompson sampler.
//!
//! Datasets are grouped by origin. Each step draws a utility sample for every
//! group, picks the best, then does the same for the datasets inside it. The
//! reward updates both the dataset posterior and the group posterior, so a
//! group's evidence shapes the prior of datasets that were never pulled.
//!
//! Modules:
//! - [`belief`]: Gaussian posteriors and their numerical oracles
//! - [`policy`]: hierarchical and flat selectors, terminal selection
//! - [`environment`]: scenarios, reward sources, k-means representatives
//! - [`metrics`]: regret, identification, trace CSV
//! - [`harness`]: seeded multi-run experiments
//! - [`cli`]: the `dash` binary

pub mod belief;
pub mod cli;
pub mod environment;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod policy;
pub mod rng;

pub use error::{DashError, Result};
