//! Doubly robust debiased Bayesian (DRDB) inference for treatment effects.
//!
//! The pipeline splits the data into `K` folds. On each training fold it fits
//! Bayesian nuisance posteriors (per-arm outcome regressions and a propensity
//! model) and takes a single draw from each. On the matching test fold the
//! draws yield closed-form Student-t posteriors for the per-arm nuisance bias
//! and for the debiased target given that bias. Fold posteriors are sampled
//! hierarchically and averaged draw-by-draw into the cross-fitted posterior.
//!
//! Modules:
//! - [`data`]: observed data, CSV ingestion, fold plans, arm subsets
//! - [`nuisance`]: ridge / Laplace-logistic / oracle nuisance posteriors
//! - [`debias`]: density ratios, weighted observables, t posteriors
//! - [`drdb`]: fold posteriors, sampling, cross-fit aggregation, summaries
//! - [`estimands`]: ATT, ATC and covariate-subgroup effects
//! - [`bench`]: simulation designs, baselines and the replication harness

pub mod bench;
pub mod data;
pub mod debias;
pub mod drdb;
pub mod error;
pub mod estimands;
pub mod nuisance;
pub mod rng;
pub mod stats;

pub use data::{ArmSubset, FoldPlan, ObservedData};
pub use debias::TPosterior;
pub use drdb::{estimate, estimate_mu0, estimate_mu1, FoldPosterior, PosteriorSummary, RunConfig};
pub use error::{Error, Result};
pub use estimands::{estimate_weighted, EstimandSpec};
